/** Bound operations, each semantically identical to its core counterpart
 * with the same defaults. Arrays cross the boundary as float64 (ASCII PLY
 * with shortest-round-trip decimals, camera/transform JSON); results come
 * back through the core's JSON outputs. */

import { promises as fs } from "node:fs";
import path from "node:path";

import { readPly, writePfm, writePlyAscii } from "./formats.js";
import { runCore, withWorkdir } from "./runner.js";
import {
  assertCamera,
  assertDepthGrid,
  assertPoints,
  BoundaryError,
  type BankEntry,
  type CamMetrics,
  type Camera,
  type DepthGrid,
  type IcpResult,
  type PcdMetrics,
  type Points,
  type RetrievalPlan,
  type SimilarityTransform,
  type TrajectoryKind,
} from "./types.js";

export * from "./types.js";
export { readPly, writePlyAscii, writePfm } from "./formats.js";

async function writeCameras(file: string, cams: Camera[]): Promise<void> {
  await fs.writeFile(file, JSON.stringify(cams));
}

/** Lift a depth grid through a camera into world points (one per pixel,
 * row-major). */
export async function backproject(
  depth: DepthGrid,
  camera: Camera,
): Promise<Points> {
  assertDepthGrid("depth", depth);
  assertCamera("camera", camera);
  return withWorkdir(async (dir) => {
    const depthPath = path.join(dir, "depth.pfm");
    const camPath = path.join(dir, "cam.json");
    const outPath = path.join(dir, "cloud.ply");
    await writePfm(depthPath, depth.values, depth.width, depth.height);
    await writeCameras(camPath, [camera]);
    await runCore([
      "backproject",
      "--depth", depthPath,
      "--camera", camPath,
      "--out", outPath,
    ]);
    return readPly(outPath);
  });
}

/** Closed-form similarity between index-aligned correspondences. */
export async function umeyama(
  source: Points,
  target: Points,
  options: { withScale?: boolean } = {},
): Promise<SimilarityTransform> {
  assertPoints("source", source);
  assertPoints("target", target);
  if (source.length !== target.length) {
    throw new BoundaryError(
      `correspondence counts differ: ${source.length} vs ${target.length}`,
    );
  }
  const withScale = options.withScale ?? true;
  return withWorkdir(async (dir) => {
    const srcPath = path.join(dir, "src.ply");
    const dstPath = path.join(dir, "dst.ply");
    const outPath = path.join(dir, "t.json");
    await writePlyAscii(srcPath, source);
    await writePlyAscii(dstPath, target);
    await runCore([
      "align",
      "--mode", "umeyama",
      withScale ? "--with-scale" : "--no-scale",
      "--source", srcPath,
      "--target", dstPath,
      "--out", outPath,
    ]);
    return JSON.parse(await fs.readFile(outPath, "utf8")) as SimilarityTransform;
  });
}

/** Iterative closest point refinement (nearest-neighbor + Umeyama updates). */
export async function icpScaleRefine(
  pred: Points,
  gt: Points,
  options: {
    init?: SimilarityTransform;
    maxIters?: number;
    tol?: number;
    trimFraction?: number;
    withScale?: boolean;
  } = {},
): Promise<IcpResult> {
  assertPoints("pred", pred);
  assertPoints("gt", gt);
  return withWorkdir(async (dir) => {
    const srcPath = path.join(dir, "src.ply");
    const dstPath = path.join(dir, "dst.ply");
    const outPath = path.join(dir, "t.json");
    await writePlyAscii(srcPath, pred);
    await writePlyAscii(dstPath, gt);
    const args = [
      "align",
      "--mode", "icp",
      options.withScale === false ? "--no-scale" : "--with-scale",
      "--source", srcPath,
      "--target", dstPath,
      "--max-iters", String(options.maxIters ?? 50),
      "--tol", String(options.tol ?? 1e-9),
      "--trim", String(options.trimFraction ?? 0.0),
      "--out", outPath,
    ];
    if (options.init) {
      const initPath = path.join(dir, "init.json");
      await fs.writeFile(initPath, JSON.stringify(options.init));
      args.push("--init", initPath);
    }
    const stdout = await runCore(args);
    const summary = JSON.parse(stdout) as { residual: number; iterations: number };
    const transform = JSON.parse(
      await fs.readFile(outPath, "utf8"),
    ) as SimilarityTransform;
    return { transform, residual: summary.residual, iterations: summary.iterations };
  });
}

/** Monte-Carlo vol(a ^ b) / vol(a) between two camera frusta. */
export async function frustumOverlap(
  cameraA: Camera,
  cameraB: Camera,
  near: number,
  far: number,
  options: { samples?: number; seed?: number } = {},
): Promise<number> {
  assertCamera("cameraA", cameraA);
  assertCamera("cameraB", cameraB);
  if (!(near > 0 && far > near)) {
    throw new BoundaryError(`need 0 < near < far, got ${near}, ${far}`);
  }
  return withWorkdir(async (dir) => {
    const aPath = path.join(dir, "a.json");
    const bPath = path.join(dir, "b.json");
    await writeCameras(aPath, [cameraA]);
    await writeCameras(bPath, [cameraB]);
    const args = [
      "overlap",
      "--camera-a", aPath,
      "--camera-b", bPath,
      "--near", String(near),
      "--far", String(far),
    ];
    if (options.samples !== undefined) args.push("--samples", String(options.samples));
    if (options.seed !== undefined) args.push("--seed", String(options.seed));
    const stdout = await runCore(args);
    return (JSON.parse(stdout) as { overlap: number }).overlap;
  });
}

/** Best-overlap reference per F = floor(N/4) uniformly spaced targets. */
export async function planRetrieval(
  targets: Camera[],
  bank: BankEntry[],
  near: number,
  far: number,
  options: { samples?: number; seed?: number; stride?: number } = {},
): Promise<RetrievalPlan> {
  targets.forEach((c, i) => assertCamera(`targets[${i}]`, c));
  bank.forEach((e, i) => assertCamera(`bank[${i}].camera`, e.camera));
  return withWorkdir(async (dir) => {
    const targetsPath = path.join(dir, "targets.json");
    const bankPath = path.join(dir, "bank.json");
    const outPath = path.join(dir, "plan.json");
    await writeCameras(targetsPath, targets);
    const manifest = {
      downsample_stride: options.stride ?? 1,
      entries: bank.map((e) => ({
        tag: e.tag,
        frame_id: e.camera.frame_id ?? 0,
        camera: e.camera,
        image_path: null,
      })),
    };
    await fs.writeFile(bankPath, JSON.stringify(manifest));
    const args = [
      "retrieve",
      "--targets", targetsPath,
      "--bank", bankPath,
      "--near", String(near),
      "--far", String(far),
      "--out", outPath,
    ];
    if (options.samples !== undefined) args.push("--samples", String(options.samples));
    if (options.seed !== undefined) args.push("--seed", String(options.seed));
    await runCore(args);
    return JSON.parse(await fs.readFile(outPath, "utf8")) as RetrievalPlan;
  });
}

async function evalPcd(
  pred: Points,
  gt: Points,
  thresholds: number[],
): Promise<{ per_threshold: PcdMetrics[]; auc?: number }> {
  assertPoints("pred", pred);
  assertPoints("gt", gt);
  if (thresholds.length === 0) {
    throw new BoundaryError("need at least one threshold");
  }
  return withWorkdir(async (dir) => {
    const predPath = path.join(dir, "pred.ply");
    const gtPath = path.join(dir, "gt.ply");
    await writePlyAscii(predPath, pred);
    await writePlyAscii(gtPath, gt);
    const stdout = await runCore([
      "eval-pcd",
      "--pred", predPath,
      "--gt", gtPath,
      "--thresholds", thresholds.join(","),
    ]);
    return JSON.parse(stdout) as { per_threshold: PcdMetrics[]; auc?: number };
  });
}

/** Distance-threshold precision / recall / F1 between pre-aligned clouds. */
export async function pcdF1(
  pred: Points,
  gt: Points,
  threshold: number,
): Promise<PcdMetrics> {
  const result = await evalPcd(pred, gt, [threshold]);
  return result.per_threshold[0];
}

/** Trapezoidal area under the (recall, precision) threshold sweep. */
export async function pcdAuc(
  pred: Points,
  gt: Points,
  thresholds: number[],
): Promise<number> {
  if (thresholds.length < 2) {
    throw new BoundaryError("pcdAuc needs at least 2 thresholds");
  }
  const result = await evalPcd(pred, gt, thresholds);
  return result.auc!;
}

/** RotErr (degrees) / TransErr / ATE after similarity alignment. */
export async function camMetrics(
  pred: Camera[],
  gt: Camera[],
): Promise<CamMetrics> {
  pred.forEach((c, i) => assertCamera(`pred[${i}]`, c));
  gt.forEach((c, i) => assertCamera(`gt[${i}]`, c));
  if (pred.length !== gt.length) {
    throw new BoundaryError(
      `trajectory lengths differ: ${pred.length} vs ${gt.length}`,
    );
  }
  return withWorkdir(async (dir) => {
    const predPath = path.join(dir, "pred.json");
    const gtPath = path.join(dir, "gt.json");
    await writeCameras(predPath, pred);
    await writeCameras(gtPath, gt);
    const stdout = await runCore([
      "eval-cam",
      "--pred", predPath,
      "--gt", gtPath,
    ]);
    return JSON.parse(stdout) as CamMetrics;
  });
}

/** Camera trajectory synthesis (up / left / right arcs, orbit circle). */
export async function synthesizeTrajectory(
  kind: TrajectoryKind,
  frames: number,
  medianDepth: number,
  options: { start?: Camera; angle?: number; angleScale?: number } = {},
): Promise<Camera[]> {
  if (!["up", "left", "right", "orbit"].includes(kind)) {
    throw new BoundaryError(`unknown trajectory kind ${kind}`);
  }
  if (medianDepth <= 0) {
    throw new BoundaryError(`medianDepth must be positive, got ${medianDepth}`);
  }
  return withWorkdir(async (dir) => {
    const outPath = path.join(dir, "cams.json");
    const args = [
      "traj",
      "--kind", kind,
      "--frames", String(frames),
      "--median-depth", String(medianDepth),
      "--out", outPath,
    ];
    if (options.start) {
      assertCamera("start", options.start);
      const startPath = path.join(dir, "start.json");
      await writeCameras(startPath, [options.start]);
      args.push("--start", startPath);
    }
    if (options.angle !== undefined) args.push("--angle", String(options.angle));
    if (options.angleScale !== undefined) {
      args.push("--angle-scale", String(options.angleScale));
    }
    await runCore(args);
    return JSON.parse(await fs.readFile(outPath, "utf8")) as Camera[];
  });
}
