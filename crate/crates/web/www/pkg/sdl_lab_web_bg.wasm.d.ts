/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_distillview_free: (a: number, b: number) => void;
export const distill: (a: number, b: number, c: number, d: number) => [number, number, number];
export const distillview_summary: (a: number) => [number, number];
export const distillview_tiles: (a: number) => [number, number];
export const imageHeight: () => number;
export const imageWidth: () => number;
export const probeField: (a: number, b: number) => [number, number, number, number];
export const teacherModes: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
