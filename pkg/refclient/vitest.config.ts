import { defineConfig } from "vitest/config";

export default defineConfig({
    test: {
        // The end-to-end test spawns a real server process and paces a
        // three-second stream at wall-clock speed.
        testTimeout: 60_000,
        hookTimeout: 30_000,
    },
});
