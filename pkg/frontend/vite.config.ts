import { defineConfig } from "vitest/config";

export default defineConfig({
  server: {
    // the inference service runs beside the dev server; same-origin paths
    // keep the client code free of hardcoded hosts
    proxy: {
      "/infer": "http://127.0.0.1:8000",
      "/health": "http://127.0.0.1:8000",
      "/sessions": "http://127.0.0.1:8000",
      "/stream": { target: "ws://127.0.0.1:8000", ws: true },
    },
  },
  test: {
    environment: "node",
  },
});
