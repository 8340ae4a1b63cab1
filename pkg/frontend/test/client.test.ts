/**
 * End-to-end tests against a real spawned engine: forge a one-task fixture
 * suite, serve it on stdio/TCP, and drive episodes through the client.
 */
import { execFileSync, spawn } from "node:child_process";
import { mkdtempSync, existsSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  EpisodeClient,
  LifecycleError,
  openEpisode,
  ServerError,
  SubmissionBoundsError,
  StdioTransport,
} from "../src/index.js";
import type { Planet, SpawnSpec } from "../src/index.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const REPO_ROOT = path.resolve(HERE, "..", "..");
const PYTHON = process.env.RVBENCH_PYTHON ?? "python3";
const GOLDEN_PATH = path.join(HERE, "golden", "easy_episode.jsonl");

const TWO_PI = 2 * Math.PI;

let suiteDir: string;
let taskId: string;
let truthPlanets: Planet[];
let truthOffsets: Record<string, number>;

function serveSpec(extraArgs: string[] = []): SpawnSpec {
  return {
    command: PYTHON,
    args: ["-m", "rvbench.cli", "serve", "--suite", suiteDir, ...extraArgs],
    cwd: REPO_ROOT,
  };
}

beforeAll(() => {
  suiteDir = mkdtempSync(path.join(tmpdir(), "rvbench-fixture-"));
  execFileSync(
    PYTHON,
    ["-m", "rvbench.cli", "forge", "--seed-base", "777",
     "--counts", "1,0,0", "--out", suiteDir],
    { cwd: REPO_ROOT, stdio: "pipe" });
  const manifest = JSON.parse(
    readFileSync(path.join(suiteDir, "manifest.json"), "utf-8"));
  const seed: number = manifest.seeds.easy[0];
  taskId = `synth_${String(seed).padStart(6, "0")}`;
  const truthDoc = JSON.parse(readFileSync(
    path.join(suiteDir, "truth", `${taskId}.truth.json`), "utf-8"));
  // the wire format has no node field: fold Omega into the mean longitude
  truthPlanets = truthDoc.planets.map((p: Record<string, number>) => ({
    P_days: p.P_days,
    m_sin_i_mjup: p.m_sin_i_mjup,
    e: p.e,
    omega_rad: p.omega_rad,
    l_rad: (((p.l_rad - p.Omega_rad) % TWO_PI) + TWO_PI) % TWO_PI,
  }));
  truthOffsets = truthDoc.offsets;
}, 120_000);

describe("episode round trip over a spawned serve process", () => {
  it("opens an easy episode, passes with truth, hits the attempt cap",
     async () => {
    const client = await openEpisode(serveSpec(), taskId);
    try {
      // dataset view mirrors the task payload, arrays aligned
      const n = client.dataset.timesDays.length;
      expect(n).toBeGreaterThanOrEqual(30);
      expect(client.dataset.rvsMs).toHaveLength(n);
      expect(client.dataset.sigmasMs).toHaveLength(n);
      expect(client.dataset.labels).toHaveLength(n);
      expect(client.dataset.tRefDays).toBe(client.dataset.timesDays[0]);
      expect(client.task.tier).toBe("easy");
      expect(client.budgets.max_submissions).toBe(3);
      // no truth-side fields anywhere in the task payload
      const raw = JSON.stringify(client.task);
      for (const leak of ["truth", "seed", "noise", "sigma_gp"]) {
        expect(raw).not.toContain(`"${leak}`);
      }

      const report = await client.submit(truthPlanets, truthOffsets);
      expect(report.passed).toBe(true);
      expect(report.ok_rms && report.ok_delta_bic && report.ok_match
             && report.ok_count).toBe(true);
      expect(report.match_score!).toBeGreaterThanOrEqual(0.95);
      expect(client.attemptsLeft).toBe(2);

      await client.submit(truthPlanets, truthOffsets);
      await client.submit(truthPlanets, truthOffsets);
      expect(client.attemptsLeft).toBe(0);

      // the 4th submission receives the attempt-cap rejection
      await expect(client.submit(truthPlanets, truthOffsets))
        .rejects.toSatisfy((err: unknown) =>
          err instanceof ServerError && err.code === "terminal_state"
          && /cap/.test(err.message));

      const result = await client.finalize("cap");
      expect(result.passed).toBe(true);
      expect(result.status).toBe("env_done");
      expect(result.n_submissions).toBe(3);
    } finally {
      await client.close();
    }
  }, 120_000);

  it("local strict validation saves attempts; lax mode burns one",
     async () => {
    const bad: Planet = { P_days: 12.0, m_sin_i_mjup: 0.5, e: 0.9,
                          omega_rad: 0.0, l_rad: 0.0 };
    const strict = await openEpisode(serveSpec(), taskId);
    try {
      expect(() => strict["strict"]).toBeDefined();
      await expect(strict.submit([bad])).rejects.toBeInstanceOf(
        SubmissionBoundsError);
      // no attempt consumed: a real submission still sees the full budget
      const report = await strict.submit(truthPlanets, truthOffsets);
      expect(report.passed).toBe(true);
      expect(strict.attemptsLeft).toBe(2);
    } finally {
      await strict.close();
    }

    const lax = await openEpisode(serveSpec(), taskId, { strict: false });
    try {
      const rejection = await lax.submit([bad]);
      expect(rejection.format_error).toBe(true);
      expect(rejection.passed).toBe(false);
      expect(lax.attemptsLeft).toBe(2); // server consumed one attempt
      expect(Object.keys(rejection.hints)).toContain("format");
    } finally {
      await lax.close();
    }
  }, 120_000);

  it("relays usage monotonically and surfaces the budget cut-off",
     async () => {
    const client = await openEpisode(serveSpec(), taskId);
    try {
      expect(await client.reportUsage(0)).toBe("accepted");
      expect(await client.reportUsage(150_000)).toBe("accepted");
      await expect(client.reportUsage(100_000)).rejects.toBeInstanceOf(
        LifecycleError);
      expect(await client.reportUsage(200_001)).toBe("budget_exceeded");
      // terminal: further messages fail locally
      await expect(client.reportUsage(200_002)).rejects.toBeInstanceOf(
        LifecycleError);
      await expect(client.submit(truthPlanets)).rejects.toBeInstanceOf(
        LifecycleError);
    } finally {
      await client.close();
    }
  }, 120_000);
});

describe("golden transcript", () => {
  it("byte-identical replies for the scripted episode (replay mode)",
     async () => {
    const script = [
      { type: "hello", episode_id: "golden-1", seq: 0,
        payload: { task_id: taskId } },
      { type: "usage", episode_id: "golden-1", seq: 1,
        payload: { tokens: 1234 } },
      { type: "submit", episode_id: "golden-1", seq: 2,
        payload: { planets: truthPlanets, offsets: truthOffsets } },
      { type: "submit", episode_id: "golden-1", seq: 3,
        payload: { planets: [] } },
      { type: "finalize", episode_id: "golden-1", seq: 4,
        payload: { reason: "agent_done" } },
    ];
    const spec = serveSpec(["--replay"]);
    const transport = new StdioTransport(spec.command, spec.args,
                                         { cwd: spec.cwd });
    const replies: string[] = [];
    const done = new Promise<void>((resolve, reject) => {
      transport.onError(reject);
      transport.onLine((line) => {
        replies.push(line);
        if (replies.length === script.length) resolve();
      });
    });
    for (const msg of script) transport.send(JSON.stringify(msg));
    await done;
    await transport.close();

    const body = replies.join("\n") + "\n";
    if (!existsSync(GOLDEN_PATH) || process.env.UPDATE_GOLDEN === "1") {
      writeFileSync(GOLDEN_PATH, body);
    }
    const golden = readFileSync(GOLDEN_PATH, "utf-8");
    expect(Buffer.from(body).equals(Buffer.from(golden))).toBe(true);
    // sanity on content: truth passes, empty submission fails
    const parsed = replies.map((l) => JSON.parse(l));
    expect(parsed.map((m) => m.type)).toEqual(
      ["task", "usage_ack", "report", "report", "result"]);
    expect(parsed[2].payload.report.passed).toBe(true);
    expect(parsed[3].payload.report.passed).toBe(false);
    expect(parsed[4].payload.passed).toBe(true);
  }, 120_000);
});

describe("tcp transport", () => {
  it("handshakes over a socket", async () => {
    const spec = serveSpec(["--addr", "127.0.0.1:0"]);
    const proc = spawn(spec.command, spec.args, { cwd: spec.cwd });
    try {
      const addr = await new Promise<string>((resolve, reject) => {
        let out = "";
        proc.stdout.setEncoding("utf-8");
        proc.stdout.on("data", (chunk: string) => {
          out += chunk;
          const m = out.match(/serving \d+ tasks on ([\d.]+:\d+)/);
          if (m) resolve(m[1]);
        });
        proc.on("error", reject);
        setTimeout(() => reject(new Error("serve did not start")),
                   30_000).unref();
      });
      const client = await openEpisode(addr, taskId);
      const report = await client.submit(truthPlanets, truthOffsets);
      expect(report.passed).toBe(true);
      const result = await client.finalize();
      expect(result.status).toBe("env_done");
      await client.close();
    } finally {
      proc.kill();
    }
  }, 120_000);

  it("connection refused rejects cleanly", async () => {
    await expect(openEpisode("127.0.0.1:1", taskId)).rejects.toBeTruthy();
  }, 30_000);
});

describe("local validation", () => {
  it("enforces the documented bounds", async () => {
    const { validatePlanets } = await import("../src/messages.js");
    const ok: Planet = { P_days: 10, m_sin_i_mjup: 0.4, e: 0.2,
                         omega_rad: 1, l_rad: 2 };
    expect(() => validatePlanets([ok], 3)).not.toThrow();
    expect(() => validatePlanets([{ ...ok, P_days: 0.4 }], 3)).toThrow(/period/);
    expect(() => validatePlanets([{ ...ok, e: 0.81 }], 3)).toThrow(
      /eccentricity/);
    expect(() => validatePlanets([{ ...ok, m_sin_i_mjup: 0 }], 3)).toThrow(
      /m sin i/);
    expect(() => validatePlanets([ok, ok, ok, ok], 3)).toThrow(/cap/);
    expect(() => validatePlanets([{ ...ok, e: Number.NaN }], 3)).toThrow();
  });
});

afterAll(() => {
  // fixture dir lives under tmpdir; leave cleanup to the OS
});
