/* tslint:disable */
/* eslint-disable */

export class FlowView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Cells per side of the image.
     */
    readonly cells: number;
    /**
     * `K f` from the cell problem at the same resolution.
     */
    readonly darcy_velocity: Float64Array;
    readonly iterations: number;
    /**
     * Mean of the zero-extended velocity over the torus.
     */
    readonly mean_velocity: Float64Array;
    readonly solid: Uint8Array;
    /**
     * `|u|` per cell, row `j` starting at `j * cells`.
     */
    readonly speed: Float64Array;
}

export class Permeability {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Row-major 2x2.
     */
    readonly k_avg: Float64Array;
    readonly k_energy: Float64Array;
    readonly porosity: number;
}

export function flow(side: number, resolution: number, periods: number, angle: number): FlowView;

export function permeability(side: number, resolution: number): Permeability;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_flowview_free: (a: number, b: number) => void;
    readonly __wbg_permeability_free: (a: number, b: number) => void;
    readonly flow: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly flowview_cells: (a: number) => number;
    readonly flowview_darcy_velocity: (a: number) => [number, number];
    readonly flowview_iterations: (a: number) => number;
    readonly flowview_mean_velocity: (a: number) => [number, number];
    readonly flowview_solid: (a: number) => [number, number];
    readonly flowview_speed: (a: number) => [number, number];
    readonly permeability: (a: number, b: number) => [number, number, number];
    readonly permeability_k_avg: (a: number) => [number, number];
    readonly permeability_k_energy: (a: number) => [number, number];
    readonly permeability_porosity: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
