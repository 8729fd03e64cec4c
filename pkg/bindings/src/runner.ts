/** Spawns the core CLI. Calls are async, so long core runs never block the
 * event loop; failures surface as CoreError carrying the core's stage tag
 * and message. */

import { execFile } from "node:child_process";
import { promises as fs } from "node:fs";
import os from "node:os";
import path from "node:path";
import { promisify } from "node:util";

import { CoreError } from "./types.js";

const execFileAsync = promisify(execFile);

/** Override with SCENEMEM_CLI, e.g. "python3 -m scenemem.cli". */
function cliCommand(): string[] {
  const override = process.env.SCENEMEM_CLI;
  return override ? override.split(/\s+/) : ["scenemem"];
}

const STAGE_PATTERN = /error \[([^\]]+)\] ([\s\S]*)/;

export async function runCore(args: string[]): Promise<string> {
  const [cmd, ...prefix] = cliCommand();
  try {
    const { stdout } = await execFileAsync(cmd, [...prefix, ...args], {
      maxBuffer: 64 * 1024 * 1024,
    });
    return stdout;
  } catch (error) {
    const err = error as { stderr?: string; message: string };
    const stderr = err.stderr ?? "";
    const match = STAGE_PATTERN.exec(stderr);
    if (match) {
      throw new CoreError(match[1], match[2].trim());
    }
    throw new CoreError("spawn", stderr.trim() || err.message);
  }
}

export async function withWorkdir<T>(
  fn: (dir: string) => Promise<T>,
): Promise<T> {
  const dir = await fs.mkdtemp(path.join(os.tmpdir(), "scenemem-bind-"));
  try {
    return await fn(dir);
  } finally {
    await fs.rm(dir, { recursive: true, force: true });
  }
}
