import { defineConfig } from "vitest/config";

// The dev server proxies API calls to a locally running `metasieve serve`,
// so the app works same-origin with no network beyond localhost.
export default defineConfig({
  server: {
    proxy: {
      "/runs": "http://127.0.0.1:8000",
    },
  },
  preview: {
    proxy: {
      "/runs": "http://127.0.0.1:8000",
    },
  },
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    testTimeout: 30_000,
    hookTimeout: 90_000,
  },
});
