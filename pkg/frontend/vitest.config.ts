import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    globalSetup: "./tests/globalSetup.ts",
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
