/**
 * Wire message shapes and submission field bounds.
 *
 * Every message is one JSON object per line carrying {type, episode_id,
 * seq, payload}; client sequence numbers start at 0 with hello and grow by
 * one per message. Planet records use the five submission fields with the
 * mean longitude referenced to t_ref = times_days[0] (node folded in).
 */
import { z } from "zod";

export const MIN_PERIOD_DAYS = 0.5;
export const MAX_ECCENTRICITY = 0.8;

export const PlanetSchema = z.object({
  P_days: z.number().finite(),
  m_sin_i_mjup: z.number().finite(),
  e: z.number().finite(),
  omega_rad: z.number().finite(),
  l_rad: z.number().finite(),
});
export type Planet = z.infer<typeof PlanetSchema>;

export const ObservationsSchema = z.object({
  times_days: z.array(z.number()),
  rvs_ms: z.array(z.number()),
  sigmas_ms: z.array(z.number()),
  labels: z.array(z.string()),
});

export const TaskDocSchema = z.object({
  schema_version: z.number(),
  task_id: z.string(),
  tier: z.enum(["easy", "medium", "hard"]),
  difficulty: z.number().int(),
  observations: ObservationsSchema,
  star_mass_sun: z.number(),
  t_ref_days: z.number(),
});
export type TaskDoc = z.infer<typeof TaskDocSchema>;

export const BudgetsSchema = z.object({
  max_tokens: z.number().int(),
  max_wall_seconds: z.number(),
  max_submissions: z.number().int(),
  max_planets_per_submission: z.number().int(),
});
export type Budgets = z.infer<typeof BudgetsSchema>;

export const RemainingSchema = z.object({
  submissions: z.number().int(),
  tokens: z.number(),
  seconds: z.number(),
});
export type Remaining = z.infer<typeof RemainingSchema>;

export const ReportSchema = z.object({
  schema_version: z.number(),
  ok_rms: z.boolean(),
  ok_delta_bic: z.boolean(),
  ok_match: z.boolean(),
  ok_count: z.boolean(),
  passed: z.boolean(),
  rms_ms: z.number().nullable(),
  median_sigma_ms: z.number().nullable(),
  delta_bic_per_point: z.number().nullable(),
  match_score: z.number().nullable(),
  n_truth: z.number().nullable(),
  n_guess: z.number().nullable(),
  assignment: z.array(z.tuple([z.number(), z.number(), z.number()])),
  hints: z.record(z.string(), z.string()),
  format_error: z.boolean(),
});
export type Report = z.infer<typeof ReportSchema>;

export const ResultSchema = z.object({
  passed: z.boolean(),
  status: z.enum(["env_done", "budget_exceeded"]),
  best_report: ReportSchema.nullable(),
  reports: z.array(ReportSchema),
  n_submissions: z.number().int(),
});
export type EpisodeResult = z.infer<typeof ResultSchema>;

const base = { episode_id: z.string(), seq: z.number().int() };

export const ServerMessageSchema = z.discriminatedUnion("type", [
  z.object({ ...base, type: z.literal("task"),
             payload: z.object({ task: TaskDocSchema, budgets: BudgetsSchema,
                                 remaining: RemainingSchema }) }),
  z.object({ ...base, type: z.literal("report"),
             payload: z.object({ report: ReportSchema,
                                 remaining: RemainingSchema }) }),
  z.object({ ...base, type: z.literal("usage_ack"),
             payload: z.object({ status: z.enum(["accepted", "budget_exceeded"]),
                                 remaining: RemainingSchema }) }),
  z.object({ ...base, type: z.literal("result"), payload: ResultSchema }),
  z.object({ ...base, type: z.literal("error"),
             payload: z.object({ code: z.string(), message: z.string() }) }),
]);
export type ServerMessage = z.infer<typeof ServerMessageSchema>;

export class SubmissionBoundsError extends Error {}

/** Documented submission field bounds, applied locally before a submit is sent. */
export function validatePlanets(planets: Planet[], maxPlanets: number): void {
  if (planets.length > maxPlanets) {
    throw new SubmissionBoundsError(
      `${planets.length} planets exceeds the cap of ${maxPlanets}`);
  }
  planets.forEach((p, i) => {
    const parsed = PlanetSchema.safeParse(p);
    if (!parsed.success) {
      throw new SubmissionBoundsError(`planet ${i}: ${parsed.error.message}`);
    }
    if (p.P_days <= MIN_PERIOD_DAYS) {
      throw new SubmissionBoundsError(
        `planet ${i}: period ${p.P_days} d must exceed ${MIN_PERIOD_DAYS} d`);
    }
    if (p.e < 0 || p.e > MAX_ECCENTRICITY) {
      throw new SubmissionBoundsError(
        `planet ${i}: eccentricity ${p.e} outside [0, ${MAX_ECCENTRICITY}]`);
    }
    if (p.m_sin_i_mjup <= 0) {
      throw new SubmissionBoundsError(
        `planet ${i}: m sin i must be positive`);
    }
  });
}
