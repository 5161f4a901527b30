"""Exercise data: the triplet text format, splits, and a synthetic generator.

Triplet format, three lines per student::

    <number of exercises>
    <comma-separated question ids>
    <comma-separated 0/1 answers>
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParseError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Exercise:
    question: int
    answer: int

    def __post_init__(self):
        if self.answer not in (0, 1):
            raise InputError(f"answer must be 0 or 1, got {self.answer!r}")

    def __iter__(self):
        yield self.question
        yield self.answer


@dataclass
class ExerciseSequence:
    student: str
    exercises: list

    def __len__(self):
        return len(self.exercises)

    @property
    def questions(self):
        return [e.question for e in self.exercises]

    @property
    def answers(self):
        return [e.answer for e in self.exercises]


@dataclass
class Dataset:
    num_questions: int
    sequences: list
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.sequences)

    def subset(self, indices, tag=None):
        prov = dict(self.provenance)
        if tag:
            prov["subset"] = tag
        return Dataset(self.num_questions, [self.sequences[i] for i in indices], prov)


def _ints(line, lineno, what):
    tokens = [t.strip() for t in line.split(",")]
    try:
        return [int(t) for t in tokens if t != ""]
    except ValueError:
        bad = next(t for t in tokens if not _is_int(t))
        raise ParseError(f"non-integer {what} token {bad!r}", line=lineno) from None


def _is_int(token):
    try:
        int(token)
        return True
    except ValueError:
        return False


def parse_triplets(text, source="<string>", min_length=2):
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    while lines and lines[-1].strip() == "":
        lines.pop()
    sequences = []
    raw_students = raw_exercises = 0
    dropped_short = dropped_answers = dropped_exercises = 0
    i = 0
    while i < len(lines):
        if lines[i].strip() == "":
            i += 1
            continue
        if i + 2 >= len(lines):
            raise ParseError("incomplete record: expected count, questions and answers lines",
                             line=i + 1)
        count_line = lines[i].strip().rstrip(",")
        if not _is_int(count_line):
            raise ParseError(f"non-integer count {count_line!r}", line=i + 1)
        count = int(count_line)
        qs = _ints(lines[i + 1], i + 2, "question")
        ys = _ints(lines[i + 2], i + 3, "answer")
        if len(qs) != count:
            raise ParseError(f"count says {count} but {len(qs)} question ids given", line=i + 2)
        if len(ys) != count:
            raise ParseError(f"count says {count} but {len(ys)} answers given", line=i + 3)
        raw_students += 1
        raw_exercises += count
        kept = [Exercise(q, y) for q, y in zip(qs, ys) if y in (0, 1)]
        dropped_answers += count - len(kept)
        if len(kept) < min_length:
            dropped_short += 1
            dropped_exercises += len(kept)
        else:
            sequences.append(ExerciseSequence(str(len(sequences) + dropped_short), kept))
        i += 3
    num_questions = max((max(s.questions) for s in sequences), default=0)
    provenance = {
        "source": source,
        "raw_students": raw_students,
        "raw_exercises": raw_exercises,
        "dropped_short_sequences": dropped_short,
        "dropped_short_exercises": dropped_exercises,
        "dropped_bad_answers": dropped_answers,
    }
    if dropped_short or dropped_answers:
        log.info("%s: dropped %d short sequences (%d exercises) and %d non-binary answers",
                 source, dropped_short, dropped_exercises, dropped_answers)
    return Dataset(num_questions, sequences, provenance)


def load_triplet_format(path, min_length=2):
    with open(path, encoding="utf-8") as fh:
        return parse_triplets(fh.read(), source=str(path), min_length=min_length)


def format_triplets(dataset):
    out = []
    for s in dataset.sequences:
        out.append(str(len(s)))
        out.append(",".join(str(q) for q in s.questions))
        out.append(",".join(str(y) for y in s.answers))
    return "\n".join(out) + ("\n" if out else "")


def save_triplet_format(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_triplets(dataset))


def densify(dataset):
    """Remap question ids to 1..|Q| in ascending order of the raw id.

    Returns the remapped dataset and the raw -> dense mapping.
    """
    raw = sorted({q for s in dataset.sequences for q in s.questions})
    mapping = {q: i + 1 for i, q in enumerate(raw)}
    seqs = [ExerciseSequence(s.student, [Exercise(mapping[e.question], e.answer) for e in s.exercises])
            for s in dataset.sequences]
    return Dataset(len(raw), seqs, dict(dataset.provenance)), mapping


def apply_mapping(dataset, mapping, num_questions):
    """Translate raw ids with an existing mapping; unknown ids are an input error."""
    seqs = []
    for s in dataset.sequences:
        ex = []
        for e in s.exercises:
            if e.question not in mapping:
                raise InputError(f"question id {e.question} is unknown to the model")
            ex.append(Exercise(mapping[e.question], e.answer))
        seqs.append(ExerciseSequence(s.student, ex))
    return Dataset(num_questions, seqs, dict(dataset.provenance))


def split_train_test(dataset, ratio=0.7, seed=0):
    """Split students into (train, test) with round(ratio * n) in train."""
    n = len(dataset)
    if n < 2:
        raise InputError(f"need at least 2 students to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    cut = min(max(int(round(ratio * n)), 1), n - 1)
    return (dataset.subset(sorted(order[:cut].tolist()), "train"),
            dataset.subset(sorted(order[cut:].tolist()), "test"))


def generate_synthetic(num_students, num_questions, num_concepts, seed=0, length=50):
    """Students practising questions tied to latent concepts.

    Every question belongs to one concept. A student's chance of answering a
    question on concept c after n earlier attempts on c is
    ``sigmoid(ability + gap_c + rate * n)``: ability is per student, gap per
    (student, concept), rate > 0 per student. Questions are drawn uniformly, so
    with one concept all questions are exchangeable.
    """
    for name, v in (("num_students", num_students), ("num_questions", num_questions),
                    ("num_concepts", num_concepts), ("length", length)):
        if v < 1:
            raise InputError(f"{name} must be positive, got {v}")
    rng = np.random.default_rng(seed)
    concept_of = rng.integers(0, num_concepts, size=num_questions)
    ability = rng.normal(0.0, 1.0, size=num_students)
    gap = rng.normal(0.0, 1.0, size=(num_students, num_concepts))
    rate = rng.uniform(0.05, 0.4, size=num_students)
    sequences = []
    for s in range(num_students):
        practice = np.zeros(num_concepts, dtype=np.int64)
        qs = rng.integers(1, num_questions + 1, size=length)
        draws = rng.random(length)
        exercises = []
        for q, u in zip(qs, draws):
            c = concept_of[q - 1]
            p = 1.0 / (1.0 + np.exp(-(ability[s] + gap[s, c] + rate[s] * practice[c])))
            exercises.append(Exercise(int(q), int(u < p)))
            practice[c] += 1
        sequences.append(ExerciseSequence(str(s), exercises))
    prov = {"source": "synthetic", "seed": seed, "num_concepts": num_concepts,
            "concept_of": concept_of.tolist()}
    return Dataset(num_questions, sequences, prov)


def dataset_stats(dataset):
    students = len(dataset.sequences)
    exercises = sum(len(s) for s in dataset.sequences)
    return {
        "questions": dataset.num_questions,
        "students": students,
        "exercises": exercises,
        "exercises_per_student": (exercises / students) if students else 0.0,
    }
