/* tslint:disable */
/* eslint-disable */

/**
 * A handful of surfels rendered from an orbiting camera.
 */
export class SurfelScene {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Adds a surfel; the normal need not be unit length.
     */
    add(x: number, y: number, z: number, nx: number, ny: number, nz: number, su: number, sv: number, opacity: number, r: number, g: number, b: number): void;
    is_empty(): boolean;
    len(): number;
    constructor();
    /**
     * RGBA8 image seen from azimuth/elevation (radians) at `distance` from
     * the origin, z up.
     */
    render(width: number, height: number, azimuth: number, elevation: number, distance: number): Uint8Array;
    set_opacity(i: number, opacity: number): void;
}

/**
 * Ambiguity of planar points given as interleaved `x, y` pairs.
 */
export function ambiguity_2d(xy: Float64Array, k: number, delta: number): Float64Array;

/**
 * `sigmoid(-k (1 - alpha - t))` sampled at `samples` opacities in [0, 1].
 */
export function noise_gain_curve(k: number, t: number, samples: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_surfelscene_free: (a: number, b: number) => void;
    readonly ambiguity_2d: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly noise_gain_curve: (a: number, b: number, c: number) => [number, number];
    readonly surfelscene_add: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number, l: number, m: number) => [number, number];
    readonly surfelscene_is_empty: (a: number) => number;
    readonly surfelscene_len: (a: number) => number;
    readonly surfelscene_new: () => number;
    readonly surfelscene_render: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly surfelscene_set_opacity: (a: number, b: number, c: number) => void;
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
