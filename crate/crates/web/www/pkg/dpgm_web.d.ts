/* tslint:disable */
/* eslint-disable */

/**
 * JSON with `counts`, `noisy_counts`, `bin`, `bound` and `c_max`.
 */
export function dpnorm_histogram(n: number, center: number, spread: number, sigma_c: number, bins: number, seed: number): string;

export function epsilon_curve(sigma_g: number, q: number, epochs: number, delta: number): Float64Array;

export function feature_dims(): Uint32Array;

export function kernel_approximation(m: number, gamma: number, pairs: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly dpnorm_histogram: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly epsilon_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly feature_dims: () => [number, number];
    readonly kernel_approximation: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
