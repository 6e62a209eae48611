import { defineConfig } from "vitest/config";

export default defineConfig({
  resolve: {
    // Sources use explicit .js specifiers for the browser; map them back to
    // the .ts files when vitest loads them directly.
    alias: [{ find: /^(\.{1,2}\/.*)\.js$/, replacement: "$1" }],
  },
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    testTimeout: 30000,
    hookTimeout: 30000,
  },
});
