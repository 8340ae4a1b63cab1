export {
  EpisodeClient,
  LifecycleError,
  openEpisode,
  ProtocolError,
  ServerError,
} from "./client.js";
export type { DatasetView, OpenOptions, SpawnSpec } from "./client.js";
export {
  MAX_ECCENTRICITY,
  MIN_PERIOD_DAYS,
  SubmissionBoundsError,
  validatePlanets,
} from "./messages.js";
export type {
  Budgets,
  EpisodeResult,
  Planet,
  Remaining,
  Report,
  TaskDoc,
} from "./messages.js";
export { StdioTransport, TcpTransport } from "./transport.js";
export type { LineTransport } from "./transport.js";
