/* tslint:disable */
/* eslint-disable */

export function bound_curve(p: number, d: number, delta: number, v: number, sigma_sq: number, c_lp: number, c_l2: number, c_star: number, n_min: number, n_max: number, points: number): Float64Array;

export function gamma_curve(p: number, t: number, x_max: number, points: number): Float64Array;

export function loss_curve(p: number, lo: number, hi: number, points: number): Float64Array;

export function tail_curve(d: number, rho: number, n_max: number): Float64Array;

/**
 * Smallest `n` whose realizable tail is at most `delta`.
 */
export function tail_sample_size(d: number, delta: number, rho: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly bound_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number) => [number, number, number, number];
    readonly gamma_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly loss_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly tail_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly tail_sample_size: (a: number, b: number, c: number) => [number, number, number];
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
