/** Readers/writers for the core's file formats: PLY clouds and PFM depth. */

import { promises as fs } from "node:fs";

import { BoundaryError, type Points } from "./types.js";

/**
 * ASCII PLY with double x,y,z. Number.prototype.toString emits the shortest
 * decimal that round-trips the IEEE double, so positions cross the boundary
 * exactly.
 */
export async function writePlyAscii(path: string, points: Points): Promise<void> {
  const header = [
    "ply",
    "format ascii 1.0",
    `element vertex ${points.length}`,
    "property double x",
    "property double y",
    "property double z",
    "end_header",
  ].join("\n");
  const body = points.map((p) => `${p[0]} ${p[1]} ${p[2]}`).join("\n");
  await fs.writeFile(path, header + "\n" + (body ? body + "\n" : ""));
}

const SCALAR_SIZES: Record<string, number> = {
  float: 4,
  float32: 4,
  double: 8,
  float64: 8,
  uchar: 1,
  uint8: 1,
  char: 1,
  short: 2,
  ushort: 2,
  int: 4,
  int32: 4,
  uint: 4,
  uint32: 4,
};

/** Reads vertex x,y,z from ASCII or binary-little-endian PLY. */
export async function readPly(path: string): Promise<Points> {
  const raw = await fs.readFile(path);
  const headerEnd = raw.indexOf("end_header");
  if (headerEnd < 0) {
    throw new BoundaryError(`not a PLY file: ${path}`);
  }
  const bodyStart = raw.indexOf(10, headerEnd) + 1; // newline after end_header
  const header = raw.subarray(0, headerEnd).toString("ascii").split(/\r?\n/);
  let format = "";
  let nVertex = 0;
  let inVertex = false;
  const properties: Array<{ name: string; kind: string }> = [];
  for (const line of header) {
    const tokens = line.trim().split(/\s+/);
    if (tokens[0] === "format") {
      format = tokens[1];
    } else if (tokens[0] === "element") {
      inVertex = tokens[1] === "vertex";
      if (inVertex) nVertex = parseInt(tokens[2], 10);
    } else if (tokens[0] === "property" && inVertex) {
      properties.push({ name: tokens[2], kind: tokens[1] });
    }
  }
  const names = properties.map((p) => p.name);
  for (const axis of ["x", "y", "z"]) {
    if (!names.includes(axis)) {
      throw new BoundaryError(`PLY vertex element missing property ${axis}`);
    }
  }
  const points: Points = [];
  if (format === "ascii") {
    const lines = raw.subarray(bodyStart).toString("ascii").trim().split(/\r?\n/);
    for (let i = 0; i < nVertex; i++) {
      const cols = lines[i].trim().split(/\s+/).map(Number);
      points.push([
        cols[names.indexOf("x")],
        cols[names.indexOf("y")],
        cols[names.indexOf("z")],
      ]);
    }
    return points;
  }
  if (format !== "binary_little_endian") {
    throw new BoundaryError(`unsupported PLY format ${format}`);
  }
  const stride = properties.reduce((acc, p) => acc + SCALAR_SIZES[p.kind], 0);
  const offsets = new Map<string, { offset: number; kind: string }>();
  let offset = 0;
  for (const p of properties) {
    offsets.set(p.name, { offset, kind: p.kind });
    offset += SCALAR_SIZES[p.kind];
  }
  const readScalar = (base: number, name: string): number => {
    const spec = offsets.get(name)!;
    const at = bodyStart + base + spec.offset;
    return spec.kind === "double" || spec.kind === "float64"
      ? raw.readDoubleLE(at)
      : raw.readFloatLE(at);
  };
  for (let i = 0; i < nVertex; i++) {
    const base = i * stride;
    points.push([
      readScalar(base, "x"),
      readScalar(base, "y"),
      readScalar(base, "z"),
    ]);
  }
  return points;
}

/** Little-endian grayscale PFM, rows stored bottom-to-top. */
export async function writePfm(
  path: string,
  values: number[][],
  width: number,
  height: number,
): Promise<void> {
  const headerText = `Pf\n${width} ${height}\n-1.0\n`;
  const header = Buffer.from(headerText, "ascii");
  const body = Buffer.alloc(width * height * 4);
  let at = 0;
  for (let row = height - 1; row >= 0; row--) {
    for (let col = 0; col < width; col++) {
      body.writeFloatLE(values[row][col], at);
      at += 4;
    }
  }
  await fs.writeFile(path, Buffer.concat([header, body]));
}
