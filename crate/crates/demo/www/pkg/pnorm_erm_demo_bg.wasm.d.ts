/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const bound_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number) => [number, number, number, number];
export const gamma_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const loss_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const tail_curve: (a: number, b: number, c: number) => [number, number, number, number];
export const tail_sample_size: (a: number, b: number, c: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
