/* tslint:disable */
/* eslint-disable */

export function lossMap(df_small: number, df_large: number, max_neg_log_alpha: number, ncp_max: number, cols: number, rows: number): Float64Array;

export function powerCurves(dfs: Uint32Array, alpha: number, ncp_max: number, points: number): Float64Array;

export function refinedMaxLoss(df_small: number, df_large: number): Float64Array;

export function xSweep(mu: Float64Array, interaction: boolean, f: number, n: number, alpha: number, sigma2: number, no_xci: boolean, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly lossMap: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly powerCurves: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly refinedMaxLoss: (a: number, b: number) => [number, number, number, number];
    readonly xSweep: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
