/* tslint:disable */
/* eslint-disable */

/**
 * Sampled curve; `values` may hold several series back to back.
 */
export class Curve {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly times: Float64Array;
    readonly values: Float64Array;
}

export function pulsePhotonNumber(b_gauss: number, n_total: number, emit_ms: number): Curve;

export function purcellRates(b_gauss: number): Float64Array;

export function rabiPopulations(omega_m_hz: number, b_gauss: number, t_max_ms: number, points: number): Curve;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_curve_free: (a: number, b: number) => void;
    readonly curve_times: (a: number) => [number, number];
    readonly curve_values: (a: number) => [number, number];
    readonly pulsePhotonNumber: (a: number, b: number, c: number) => [number, number, number];
    readonly purcellRates: (a: number) => [number, number, number, number];
    readonly rabiPopulations: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
