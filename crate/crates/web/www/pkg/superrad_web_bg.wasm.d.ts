/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_curve_free: (a: number, b: number) => void;
export const curve_times: (a: number) => [number, number];
export const curve_values: (a: number) => [number, number];
export const pulsePhotonNumber: (a: number, b: number, c: number) => [number, number, number];
export const purcellRates: (a: number) => [number, number, number, number];
export const rabiPopulations: (a: number, b: number, c: number, d: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
