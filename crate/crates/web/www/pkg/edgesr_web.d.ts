/* tslint:disable */
/* eslint-disable */

export class Restored {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly height: number;
    readonly lr: Uint8Array;
    readonly lr_height: number;
    readonly lr_width: number;
    readonly reference: Uint8Array;
    readonly restored: Uint8Array;
    readonly width: number;
}

export function compare(a: Uint8Array, b: Uint8Array, width: number, height: number): Float64Array;

export function degrade_restore(rgba: Uint8Array, width: number, height: number, scale: number): Restored;

export function edges(rgba: Uint8Array, width: number, height: number, sigma: number, low: number, high: number): Uint8Array;

export function scene(size: number, seed: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_restored_free: (a: number, b: number) => void;
    readonly compare: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly degrade_restore: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly edges: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly restored_height: (a: number) => number;
    readonly restored_lr: (a: number) => [number, number];
    readonly restored_lr_height: (a: number) => number;
    readonly restored_lr_width: (a: number) => number;
    readonly restored_reference: (a: number) => [number, number];
    readonly restored_restored: (a: number) => [number, number];
    readonly restored_width: (a: number) => number;
    readonly scene: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
