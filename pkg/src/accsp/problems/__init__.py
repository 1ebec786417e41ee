"""Problem files and the bundled example registry.

A problem is stored as a single JSON document (format tag
``accsp-problem/1``) holding the domain polytope, the dc objective, the
dc functionals with their signed row coefficients and thresholds, and
the sample source.  Serialization is canonical: keys are sorted, floats
use shortest round-trip repr, and absent optional fields are omitted, so
saving a loaded problem reproduces the file byte for byte.  The schema
is documented in ``docs/problem-format.md``.

``build(name)`` constructs the bundled examples in code; the JSON files
shipped next to this module are their canonical exports and double as
golden fixtures for the loader.
"""

import json
from importlib import resources

import numpy as np

from ..model import (
    AccProblem,
    DcMaxFunction,
    Polytope,
    RandomSource,
    SmoothConvexPiece,
    affine_piece,
    zero_piece,
)

__all__ = [
    "FORMAT_TAG",
    "ProblemFormatError",
    "build",
    "bundled",
    "dumps_problem",
    "load_problem",
    "loads_problem",
    "problems_equal",
    "registry_names",
    "save_problem",
]

FORMAT_TAG = "accsp-problem/1"

_TOP_KEYS = {"format", "name", "comment", "domain", "objective",
             "functionals", "row_coeffs", "zeta", "source"}
_PIECE_KEYS = {"a", "b", "Q", "a_z", "b_z", "a_table", "b_table"}


class ProblemFormatError(ValueError):
    """Problem file rejected, with a location to point the user at.

    ``where`` is a dotted path into the document ("functionals[0].g[1]")
    and ``line`` the 1-based text line when one can be attributed.
    """

    def __init__(self, message, where=None, line=None):
        self.where = where
        self.line = line
        parts = []
        if line is not None:
            parts.append("line {}".format(line))
        if where:
            parts.append(where)
        prefix = ", ".join(parts)
        super().__init__("{}: {}".format(prefix, message) if prefix
                         else message)


# ---------------------------------------------------------------------------
# serialization


def _piece_dict(piece):
    out = {"a": piece.a.tolist(), "b": piece.b}
    for key in ("Q", "a_z", "b_z", "a_table", "b_table"):
        val = getattr(piece, key)
        if val is not None:
            out[key] = np.asarray(val).tolist()
    return out


def _dc_dict(f):
    out = {"g": [_piece_dict(p) for p in f.g_pieces]}
    if f.h_pieces:
        out["h"] = [_piece_dict(p) for p in f.h_pieces]
    return out


def _domain_dict(domain):
    out = {}
    if domain.A is not None:
        out["A"] = np.asarray(domain.A).tolist()
        out["b"] = np.asarray(domain.b).tolist()
    if domain.lo is not None:
        out["lo"] = domain.lo.tolist()
    if domain.hi is not None:
        out["hi"] = domain.hi.tolist()
    return out


def _source_dict(source):
    if source.kind == "uniform":
        return {"kind": "uniform", "lo": source.lo.tolist(),
                "hi": source.hi.tolist()}
    if source.kind == "finite":
        return {"kind": "finite", "values": source.values.tolist(),
                "probs": source.probs.tolist()}
    raise ValueError(
        "source kind {!r} cannot be serialized".format(source.kind))


def dumps_problem(problem):
    """Canonical JSON text for a problem (sorted keys, trailing newline)."""
    doc = {
        "format": FORMAT_TAG,
        "name": problem.name,
        "domain": _domain_dict(problem.domain),
        "objective": _dc_dict(problem.objective),
        "functionals": [_dc_dict(f) for f in problem.functionals],
        "row_coeffs": problem.E.tolist(),
        "zeta": problem.zeta.tolist(),
        "source": _source_dict(problem.source),
    }
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def save_problem(problem, path):
    text = dumps_problem(problem)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def problems_equal(p, q):
    """Exact structural equality via the canonical serialization."""
    return dumps_problem(p) == dumps_problem(q)


# ---------------------------------------------------------------------------
# loading


def _anchor(text, token):
    """Best-effort line number of a key token in the source text."""
    needle = '"{}"'.format(token)
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def _fail(text, where, message):
    token = where.split(".")[-1].split("[")[0] if where else None
    raise ProblemFormatError(message, where=where,
                             line=_anchor(text, token) if token else None)


def _need(text, obj, key, where, types, type_name):
    if key not in obj:
        _fail(text, where, "missing required key {!r}".format(key))
    val = obj[key]
    if not isinstance(val, types):
        _fail(text, "{}.{}".format(where, key) if where else key,
              "expected {}".format(type_name))
    return val


def _vector(text, val, where):
    if not isinstance(val, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool)
            for v in val):
        _fail(text, where, "expected a list of numbers")
    return [float(v) for v in val]


def _matrix(text, val, where):
    if not isinstance(val, list) or not val:
        _fail(text, where, "expected a non-empty list of rows")
    return [_vector(text, row, "{}[{}]".format(where, i))
            for i, row in enumerate(val)]


def _load_piece(text, obj, where):
    if not isinstance(obj, dict):
        _fail(text, where, "expected an object")
    unknown = set(obj) - _PIECE_KEYS
    if unknown:
        _fail(text, where, "unknown key {!r}".format(sorted(unknown)[0]))
    a = _vector(text, _need(text, obj, "a", where, list, "a list"),
                where + ".a")
    kwargs = {}
    if "b" in obj:
        kwargs["b"] = float(_need(text, obj, "b", where, (int, float),
                                  "a number"))
    for key in ("Q", "a_z", "a_table"):
        if key in obj:
            kwargs[key] = _matrix(text, obj[key], "{}.{}".format(where, key))
    for key in ("b_z", "b_table"):
        if key in obj:
            kwargs[key] = _vector(text, obj[key], "{}.{}".format(where, key))
    try:
        return SmoothConvexPiece(a, **kwargs)
    except ValueError as exc:
        _fail(text, where, str(exc))


def _load_dc(text, obj, where):
    if not isinstance(obj, dict):
        _fail(text, where, "expected an object")
    g_raw = _need(text, obj, "g", where, list, "a list of pieces")
    if not g_raw:
        _fail(text, where + ".g", "needs at least one piece")
    g = [_load_piece(text, p, "{}.g[{}]".format(where, i))
         for i, p in enumerate(g_raw)]
    h = None
    if obj.get("h"):
        h = [_load_piece(text, p, "{}.h[{}]".format(where, i))
             for i, p in enumerate(obj["h"])]
    try:
        return DcMaxFunction(g, h)
    except ValueError as exc:
        _fail(text, where, str(exc))


def _load_domain(text, obj):
    if not isinstance(obj, dict):
        _fail(text, "domain", "expected an object")
    kwargs = {}
    if "A" in obj:
        kwargs["A"] = _matrix(text, obj["A"], "domain.A")
        kwargs["b"] = _vector(text, _need(text, obj, "b", "domain", list,
                                          "a list"), "domain.b")
    for key in ("lo", "hi"):
        if key in obj:
            kwargs[key] = _vector(text, obj[key], "domain." + key)
    try:
        return Polytope(**kwargs)
    except (TypeError, ValueError) as exc:
        _fail(text, "domain", str(exc))


def _load_source(text, obj):
    if not isinstance(obj, dict):
        _fail(text, "source", "expected an object")
    kind = _need(text, obj, "kind", "source", str, "a string")
    if kind == "uniform":
        lo = _vector(text, _need(text, obj, "lo", "source", list, "a list"),
                     "source.lo")
        hi = _vector(text, _need(text, obj, "hi", "source", list, "a list"),
                     "source.hi")
        try:
            return RandomSource("uniform", lo=lo, hi=hi)
        except ValueError as exc:
            _fail(text, "source", str(exc))
    if kind == "finite":
        values = _matrix(text, _need(text, obj, "values", "source", list,
                                     "a list of rows"), "source.values")
        probs = None
        if "probs" in obj:
            probs = _vector(text, obj["probs"], "source.probs")
        try:
            return RandomSource("finite", values=values, probs=probs)
        except ValueError as exc:
            _fail(text, "source", str(exc))
    _fail(text, "source.kind", "unsupported kind {!r}".format(kind))


def loads_problem(text, strict=False):
    """Parse problem JSON text; raise ProblemFormatError on any defect."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError("invalid JSON: {}".format(exc.msg),
                                 line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise ProblemFormatError("top level must be an object")
    tag = _need(text, doc, "format", "", str, "a string")
    if tag != FORMAT_TAG:
        _fail(text, "format",
              "unsupported tag {!r} (expected {!r})".format(tag, FORMAT_TAG))
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        _fail(text, "", "unknown key {!r}".format(sorted(unknown)[0]))
    name = doc.get("name", "")
    if not isinstance(name, str):
        _fail(text, "name", "expected a string")
    domain = _load_domain(text, _need(text, doc, "domain", "", dict,
                                      "an object"))
    objective = _load_dc(text, _need(text, doc, "objective", "", dict,
                                     "an object"), "objective")
    fun_raw = _need(text, doc, "functionals", "", list, "a list")
    if not fun_raw:
        _fail(text, "functionals", "needs at least one functional")
    functionals = [_load_dc(text, f, "functionals[{}]".format(i))
                   for i, f in enumerate(fun_raw)]
    row_coeffs = _matrix(text, _need(text, doc, "row_coeffs", "", list,
                                     "a matrix"), "row_coeffs")
    zeta = _vector(text, _need(text, doc, "zeta", "", list, "a list"), "zeta")
    source = _load_source(text, _need(text, doc, "source", "", dict,
                                      "an object"))
    try:
        return AccProblem(domain, objective, functionals, row_coeffs, zeta,
                          source, name=name, strict=strict)
    except ValueError as exc:
        raise ProblemFormatError(str(exc)) from None


def load_problem(path, strict=False):
    with open(path) as fh:
        text = fh.read()
    return loads_problem(text, strict=strict)


# ---------------------------------------------------------------------------
# bundled examples


def _hinge_functional():
    return DcMaxFunction(
        [SmoothConvexPiece([0.0], 0.0, b_z=[1.0])],
        [affine_piece([2.0], 0.0), affine_piece([-2.0], 1.0)])


def _build_hinge1d():
    """Uniform noise minus a tent; one conservative probability row."""
    return AccProblem(
        Polytope(lo=[-1.0], hi=[1.0]),
        affine_piece([1.0], 1.0),
        [_hinge_functional()],
        [[1.0]],
        [0.25],
        RandomSource("uniform", lo=[-1.0], hi=[1.0]),
        name="hinge1d")


def _build_hinge1d_relaxed():
    """Same functional, permissive row, objective drawing to the gap edge."""
    objective = DcMaxFunction(
        [affine_piece([0.0], 2.0)],
        [affine_piece([1.0], -0.375), affine_piece([-1.0], 0.375)])
    return AccProblem(
        Polytope(lo=[-1.0], hi=[1.0]),
        objective,
        [_hinge_functional()],
        [[1.0]],
        [0.125],
        RandomSource("uniform", lo=[-1.0], hi=[1.0]),
        name="hinge1d-relaxed")


def _build_sign_bernoulli():
    """Two-atom sign flip: open and closed indicators disagree at zero."""
    flip = DcMaxFunction(
        [SmoothConvexPiece([0.0], 0.0, a_table=[[-1.0], [1.0]])],
        [zero_piece(1)])
    return AccProblem(
        Polytope(lo=[-1.0], hi=[1.0]),
        affine_piece([1.0], 1.0),
        [flip],
        [[1.0]],
        [0.1],
        RandomSource("finite", values=[[0.0], [1.0]], probs=[0.5, 0.5]),
        name="sign-bernoulli")


def _build_ramp_threshold():
    """Penalty-threshold demo: slope-one objective against one ramp row."""
    return AccProblem(
        Polytope(lo=[-0.25], hi=[1.0]),
        affine_piece([1.0], 1.0),
        [DcMaxFunction([SmoothConvexPiece([-2.0], 0.0, b_z=[1.0])],
                       [zero_piece(1)])],
        [[1.0]],
        [0.25],
        RandomSource("uniform", lo=[-1.0], hi=[1.0]),
        name="ramp-threshold")


_BUILDERS = {
    "hinge1d": _build_hinge1d,
    "hinge1d-relaxed": _build_hinge1d_relaxed,
    "sign-bernoulli": _build_sign_bernoulli,
    "ramp-threshold": _build_ramp_threshold,
}


def registry_names():
    return tuple(sorted(_BUILDERS))


def build(name):
    """Fresh in-memory instance of a bundled example."""
    if name not in _BUILDERS:
        raise KeyError("unknown problem {!r}; known: {}".format(
            name, ", ".join(registry_names())))
    return _BUILDERS[name]()


def bundled_text(name):
    if name not in _BUILDERS:
        raise KeyError("unknown problem {!r}; known: {}".format(
            name, ", ".join(registry_names())))
    return resources.files(__package__).joinpath(name + ".json").read_text()


def bundled(name, strict=False):
    """Load a bundled example from its shipped JSON file."""
    return loads_problem(bundled_text(name), strict=strict)
