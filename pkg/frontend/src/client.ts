/**
 * Episode client: hello/task handshake, submissions, usage relay,
 * finalization. One client object drives one episode; messages are strictly
 * sequential (the protocol answers in order).
 *
 * The client performs no grading of its own; strict mode only checks the
 * documented submission bounds locally so malformed candidates do not burn
 * an attempt on the server.
 */
import { randomUUID } from "node:crypto";

import {
  Budgets,
  EpisodeResult,
  Planet,
  Remaining,
  Report,
  ServerMessage,
  ServerMessageSchema,
  TaskDoc,
  validatePlanets,
} from "./messages.js";
import { LineTransport, StdioTransport, TcpTransport } from "./transport.js";

export class ProtocolError extends Error {}
export class ServerError extends Error {
  constructor(public readonly code: string, message: string) {
    super(message);
  }
}
export class LifecycleError extends Error {}

export interface OpenOptions {
  /** Validate submission bounds locally before sending (default on). */
  strict?: boolean;
  episodeId?: string;
}

export interface DatasetView {
  timesDays: number[];
  rvsMs: number[];
  sigmasMs: number[];
  labels: string[];
  starMassSun: number;
  tRefDays: number;
}

export class EpisodeClient {
  readonly episodeId: string;
  readonly task: TaskDoc;
  readonly dataset: DatasetView;
  readonly budgets: Budgets;
  remaining: Remaining;
  lastReport: Report | null = null;
  private seq = 1; // hello consumed seq 0
  private tokensReported = 0;
  private terminal = false;
  private readonly strict: boolean;

  private constructor(private readonly transport: LineTransport,
                      episodeId: string, task: TaskDoc, budgets: Budgets,
                      remaining: Remaining, strict: boolean) {
    this.episodeId = episodeId;
    this.task = task;
    this.budgets = budgets;
    this.remaining = remaining;
    this.strict = strict;
    this.dataset = {
      timesDays: task.observations.times_days,
      rvsMs: task.observations.rvs_ms,
      sigmasMs: task.observations.sigmas_ms,
      labels: task.observations.labels,
      starMassSun: task.star_mass_sun,
      tRefDays: task.t_ref_days,
    };
  }

  /** hello/task handshake against an already-connected transport. */
  static async open(transport: LineTransport, taskId: string,
                    opts: OpenOptions = {}): Promise<EpisodeClient> {
    const episodeId = opts.episodeId ?? `ep-${randomUUID()}`;
    const reply = await roundTrip(transport, {
      type: "hello", episode_id: episodeId, seq: 0,
      payload: { task_id: taskId },
    });
    if (reply.type === "error") {
      throw new ServerError(reply.payload.code, reply.payload.message);
    }
    if (reply.type !== "task") {
      throw new ProtocolError(`expected task, got ${reply.type}`);
    }
    const { task, budgets, remaining } = reply.payload;
    const n = task.observations.times_days.length;
    for (const arr of [task.observations.rvs_ms, task.observations.sigmas_ms,
                       task.observations.labels]) {
      if (arr.length !== n) {
        throw new ProtocolError("dataset arrays have unequal lengths");
      }
    }
    return new EpisodeClient(transport, episodeId, task, budgets, remaining,
                             opts.strict ?? true);
  }

  get attemptsLeft(): number {
    return this.remaining.submissions;
  }

  async submit(planets: Planet[],
               offsets?: Record<string, number>): Promise<Report> {
    this.requireLive();
    if (this.strict) {
      validatePlanets(planets, this.budgets.max_planets_per_submission);
    }
    const payload: Record<string, unknown> = { planets };
    if (offsets !== undefined) payload.offsets = offsets;
    const reply = await this.request("submit", payload);
    if (reply.type === "error") {
      this.noteTerminalCodes(reply.payload.code);
      throw new ServerError(reply.payload.code, reply.payload.message);
    }
    if (reply.type !== "report") {
      throw new ProtocolError(`expected report, got ${reply.type}`);
    }
    this.remaining = reply.payload.remaining;
    this.lastReport = reply.payload.report;
    return reply.payload.report;
  }

  async reportUsage(tokens: number): Promise<"accepted" | "budget_exceeded"> {
    this.requireLive();
    if (!Number.isInteger(tokens) || tokens < this.tokensReported) {
      throw new LifecycleError(
        `token counter must be a non-decreasing integer ` +
        `(${tokens} after ${this.tokensReported})`);
    }
    const reply = await this.request("usage", { tokens });
    if (reply.type === "error") {
      this.noteTerminalCodes(reply.payload.code);
      throw new ServerError(reply.payload.code, reply.payload.message);
    }
    if (reply.type !== "usage_ack") {
      throw new ProtocolError(`expected usage_ack, got ${reply.type}`);
    }
    this.tokensReported = tokens;
    this.remaining = reply.payload.remaining;
    if (reply.payload.status === "budget_exceeded") {
      this.terminal = true;
    }
    return reply.payload.status;
  }

  async finalize(reason: "agent_done" | "cap" | "timeout" | "token_limit" =
                 "agent_done"): Promise<EpisodeResult> {
    const reply = await this.request("finalize", { reason });
    if (reply.type === "error") {
      throw new ServerError(reply.payload.code, reply.payload.message);
    }
    if (reply.type !== "result") {
      throw new ProtocolError(`expected result, got ${reply.type}`);
    }
    this.terminal = true;
    return reply.payload;
  }

  close(): Promise<void> {
    return this.transport.close();
  }

  private requireLive(): void {
    if (this.terminal) {
      throw new LifecycleError("episode already ended");
    }
  }

  private noteTerminalCodes(code: string): void {
    if (code === "terminal_state" || code === "budget_exceeded") {
      this.terminal = true;
    }
  }

  private request(type: string,
                  payload: Record<string, unknown>): Promise<ServerMessage> {
    return roundTrip(this.transport, {
      type, episode_id: this.episodeId, seq: this.seq++, payload,
    });
  }
}

function roundTrip(transport: LineTransport,
                   msg: Record<string, unknown>): Promise<ServerMessage> {
  return new Promise((resolve, reject) => {
    transport.onError(reject);
    transport.onLine((line) => {
      transport.onLine(() => {});
      const parsed = ServerMessageSchema.safeParse(JSON.parse(line));
      if (!parsed.success) {
        reject(new ProtocolError(`bad server message: ${parsed.error.message}`));
      } else {
        resolve(parsed.data);
      }
    });
    transport.send(JSON.stringify(msg));
  });
}

export interface SpawnSpec {
  command: string;
  args: string[];
  cwd?: string;
}

/**
 * Open an episode by address. Strings are "host:port" TCP addresses; a
 * SpawnSpec starts a serve subprocess and talks to it on stdio.
 */
export async function openEpisode(
  address: string | SpawnSpec, taskId: string,
  opts: OpenOptions = {}): Promise<EpisodeClient> {
  const transport: LineTransport = typeof address === "string"
    ? await TcpTransport.connect(address)
    : new StdioTransport(address.command, address.args, { cwd: address.cwd });
  try {
    return await EpisodeClient.open(transport, taskId, opts);
  } catch (err) {
    await transport.close();
    throw err;
  }
}
