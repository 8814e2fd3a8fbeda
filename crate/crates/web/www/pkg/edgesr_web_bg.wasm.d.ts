/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_restored_free: (a: number, b: number) => void;
export const compare: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const degrade_restore: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const edges: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const restored_height: (a: number) => number;
export const restored_lr: (a: number) => [number, number];
export const restored_lr_height: (a: number) => number;
export const restored_lr_width: (a: number) => number;
export const restored_reference: (a: number) => [number, number];
export const restored_restored: (a: number) => [number, number];
export const restored_width: (a: number) => number;
export const scene: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
