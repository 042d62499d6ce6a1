import { defineConfig } from "vite";

// Dev-server proxy to a locally running prediction service
// (`formcast serve --port 8000`).
export default defineConfig({
  server: {
    proxy: {
      "/meta": "http://127.0.0.1:8000",
      "/predict": "http://127.0.0.1:8000",
      "/health": "http://127.0.0.1:8000",
    },
  },
});
