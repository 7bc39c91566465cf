/* tslint:disable */
/* eslint-disable */

export class DistillView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Metrics and labels as a JSON object.
     */
    summary(): string;
    tiles(): Uint8Array;
}

export function distill(method: string, seed: number, iters: number): DistillView;

export function imageHeight(): number;

export function imageWidth(): number;

/**
 * Violation counts for the four segment families, as JSON.
 */
export function probeField(seed: number, segments: number): string;

export function teacherModes(): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_distillview_free: (a: number, b: number) => void;
    readonly distill: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly distillview_summary: (a: number) => [number, number];
    readonly distillview_tiles: (a: number) => [number, number];
    readonly imageHeight: () => number;
    readonly imageWidth: () => number;
    readonly probeField: (a: number, b: number) => [number, number, number, number];
    readonly teacherModes: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
