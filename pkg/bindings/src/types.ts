/** Shared wire types matching the core's JSON documents. */

/** Pinhole camera with camera-to-world pose (R row-major 9, t length 3). */
export interface Camera {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  R: number[];
  t: number[];
  frame_id?: number;
}

/** x -> scale * R @ x + t, R row-major. */
export interface SimilarityTransform {
  scale: number;
  R: number[];
  t: number[];
}

/** N x 3 float64 positions. JS numbers are IEEE-754 doubles already. */
export type Points = number[][];

export interface DepthGrid {
  /** Row-major H x W depth values (camera-z). */
  values: number[][];
  width: number;
  height: number;
}

export interface PcdMetrics {
  threshold: number;
  precision: number;
  recall: number;
  f1: number;
}

export interface CamMetrics {
  rot_err_deg: number;
  trans_err: number;
  ate: number;
}

export interface RetrievalPair {
  target: number;
  bank_entry: number | null;
  overlap: number;
}

export interface RetrievalPlan {
  F: number;
  pairs: RetrievalPair[];
}

export interface BankEntry {
  camera: Camera;
  tag: "initial" | "panorama" | "generated";
}

export interface IcpResult {
  transform: SimilarityTransform;
  residual: number;
  iterations: number;
}

export type TrajectoryKind = "up" | "left" | "right" | "orbit";

/** Failure inside the core, tagged with the failing stage. */
export class CoreError extends Error {
  constructor(
    public readonly stage: string,
    message: string,
  ) {
    super(`[${stage}] ${message}`);
    this.name = "CoreError";
  }
}

/** Boundary rejection: the core is never invoked. */
export class BoundaryError extends TypeError {
  constructor(message: string) {
    super(message);
    this.name = "BoundaryError";
  }
}

export function assertPoints(name: string, pts: unknown): asserts pts is Points {
  if (!Array.isArray(pts) || pts.length === 0) {
    throw new BoundaryError(`${name} must be a non-empty array of [x, y, z] rows`);
  }
  for (const row of pts as unknown[][]) {
    if (!Array.isArray(row) || row.length !== 3) {
      throw new BoundaryError(
        `${name} rows must have exactly 3 components, got ${Array.isArray(row) ? row.length : typeof row}`,
      );
    }
    for (const v of row) {
      if (typeof v !== "number" || !Number.isFinite(v)) {
        throw new BoundaryError(`${name} contains a non-finite value`);
      }
    }
  }
}

export function assertCamera(name: string, cam: Camera): void {
  if (!cam || typeof cam !== "object") {
    throw new BoundaryError(`${name} must be a camera object`);
  }
  if (!Array.isArray(cam.R) || cam.R.length !== 9) {
    throw new BoundaryError(`${name}.R must hold 9 row-major floats`);
  }
  if (!Array.isArray(cam.t) || cam.t.length !== 3) {
    throw new BoundaryError(`${name}.t must hold 3 floats`);
  }
  for (const key of ["fx", "fy", "cx", "cy", "width", "height"] as const) {
    if (typeof cam[key] !== "number" || !Number.isFinite(cam[key])) {
      throw new BoundaryError(`${name}.${key} must be a finite number`);
    }
  }
}

export function assertDepthGrid(name: string, depth: DepthGrid): void {
  if (!depth || !Array.isArray(depth.values)) {
    throw new BoundaryError(`${name}.values must be a 2-D array`);
  }
  if (depth.values.length !== depth.height) {
    throw new BoundaryError(
      `${name} has ${depth.values.length} rows but height ${depth.height}`,
    );
  }
  for (const row of depth.values) {
    if (!Array.isArray(row) || row.length !== depth.width) {
      throw new BoundaryError(`${name} rows must have width ${depth.width}`);
    }
  }
}
