import { defineConfig } from 'vitest/config';

// Model building and the interop subprocesses are slow on a cold CPU
// backend, and parallel files would fight over one core.
export default defineConfig({
  test: {
    testTimeout: 180_000,
    hookTimeout: 180_000,
    fileParallelism: false,
  },
});
