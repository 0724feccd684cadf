import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["tests/**/*.test.ts"],
    // the live-server acceptance test starts a study server and walks a
    // whole session through it
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
