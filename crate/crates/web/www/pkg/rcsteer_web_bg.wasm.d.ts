/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const dim_curve: (a: number, b: number, c: number, d: bigint, e: number, f: number) => [number, number, number, number];
export const gamma_demo: (a: number, b: number, c: number, d: number, e: bigint, f: number, g: number) => [number, number, number, number];
export const steer: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
