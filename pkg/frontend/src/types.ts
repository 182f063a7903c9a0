/** Wire types mirroring the review service's JSON payloads. */

export type Side = "source" | "translation";

export type MainAnswer = "badly_translated" | "not_badly_translated";

export interface TaskSpan {
  side: Side;
  start: number;
  end: number;
}

export interface AnswerOption {
  id: string;
  label: string;
}

export interface RaterProgress {
  assigned: number;
  answered: number;
}

export interface Progress {
  tasks: number;
  answers: number;
  raters: Record<string, RaterProgress>;
}

export interface TaskPayload {
  task_id: string;
  source_text: string;
  translation_text: string;
  spans: TaskSpan[];
  kind: string;
  assignment: string[];
  pair: string | null;
  options: Record<MainAnswer, AnswerOption[]>;
  progress: Progress;
}

export interface SessionDone {
  done: true;
  progress: Progress;
}

export type NextTaskResponse = TaskPayload | SessionDone;

export interface AnswerSubmission {
  task_id: string;
  rater_id: string;
  main: MainAnswer;
  explanation: string;
  note: string;
}

export function isDone(response: NextTaskResponse): response is SessionDone {
  return (response as SessionDone).done === true;
}
