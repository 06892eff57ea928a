/* tslint:disable */
/* eslint-disable */

export function approximate(values: Float64Array, planes: number, residual_weights: boolean): string;

export function missReport(candidates: number, relevant: number, per_thread: number, max_missed: number, trials: number, seed: number): string;

export function refinedLevels(planes: number, residual_weights: boolean): string;

export function scanMap(candidates: number, threads_per_block: number, items_per_thread: number, relevant: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly approximate: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly missReport: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly refinedLevels: (a: number, b: number) => [number, number, number, number];
    readonly scanMap: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
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
