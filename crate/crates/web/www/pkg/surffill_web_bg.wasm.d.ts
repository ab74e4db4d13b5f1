/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_surfelscene_free: (a: number, b: number) => void;
export const ambiguity_2d: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const noise_gain_curve: (a: number, b: number, c: number) => [number, number];
export const surfelscene_add: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number, l: number, m: number) => [number, number];
export const surfelscene_is_empty: (a: number) => number;
export const surfelscene_len: (a: number) => number;
export const surfelscene_new: () => number;
export const surfelscene_render: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const surfelscene_set_opacity: (a: number, b: number, c: number) => void;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
