// Asset loading and sandboxed evaluation for the probe scripts.
//
// The socket-probe and DNS-racing assets are canonical in the Python
// toolkit's payload generator (it embeds them into generated pages); the
// occupancy/sweep-count asset lives here because no generated payload
// embeds it. All assets are plain browser scripts with a single config
// marker line that the generator replaces, and their auto-run blocks are
// gated on `window`, so evaluating them under node:vm defines the
// functions without side effects.

import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";
import * as vm from "node:vm";

const HERE = dirname(fileURLToPath(import.meta.url));

export const PRIMARY_ASSET_DIR = join(HERE, "..", "..", "src", "cachefp", "payloadgen", "assets");
export const LOCAL_ASSET_DIR = HERE;

export const CONFIG_MARKER = "/*__CONFIG__*/";

export function loadAsset(name: string, dir: string = PRIMARY_ASSET_DIR): string {
  return readFileSync(join(dir, name), "utf-8");
}

export function substituteConfig(source: string, config: unknown): string {
  const assignment = "globalThis.__PROBE_CONFIG__ = " + JSON.stringify(config) + ";";
  return source.replace(CONFIG_MARKER, assignment);
}

export interface AssetContext {
  [key: string]: unknown;
}

export function evalAsset(source: string, globals: AssetContext = {}): AssetContext {
  const context = vm.createContext({ console, ...globals });
  vm.runInContext(source, context, { timeout: 30_000 });
  return context;
}

export function loadAndEval(name: string, dir?: string, globals?: AssetContext): AssetContext {
  return evalAsset(loadAsset(name, dir), globals);
}
