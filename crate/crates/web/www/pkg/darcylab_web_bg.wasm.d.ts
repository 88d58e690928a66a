/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_flowview_free: (a: number, b: number) => void;
export const __wbg_permeability_free: (a: number, b: number) => void;
export const flow: (a: number, b: number, c: number, d: number) => [number, number, number];
export const flowview_cells: (a: number) => number;
export const flowview_darcy_velocity: (a: number) => [number, number];
export const flowview_iterations: (a: number) => number;
export const flowview_mean_velocity: (a: number) => [number, number];
export const flowview_solid: (a: number) => [number, number];
export const flowview_speed: (a: number) => [number, number];
export const permeability: (a: number, b: number) => [number, number, number];
export const permeability_k_avg: (a: number) => [number, number];
export const permeability_k_energy: (a: number) => [number, number];
export const permeability_porosity: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
