"""Plain-text problem definitions.

A problem file is an INI document::

    [problem]
    dim = 2
    name = drift_example

    [domain]                 ; omit the section for free space
    lower = 0, 0
    upper = 1, 1

    [coefficients]
    drift = grad_exp_bilinear
    drift_params = 0.5
    diffusion = constant_diag
    diffusion_params = 1, 1
    killing = constant       ; optional, default 0
    killing_params = 0
    initial = product
    initial_params = 1
    boundary = product       ; required with a domain
    boundary_params = 1

    [bounds]                 ; optional
    killing_lower = 0
    killing_upper = 0
    theta_max = 0.5
    global = false

Form names and parameter layouts are those of :mod:`fkpde.forms`:

=================  ===========================  =================================
coefficient        form                         params
=================  ===========================  =================================
drift              constant                     ``b`` (d values)
drift              linear                       ``b0`` (d), then ``B`` row-major
drift              grad_exp_bilinear (d = 2)    ``kappa``: drift ``grad exp(kappa x1 x2)``
diffusion          constant_diag                diagonal of ``a`` (d values)
killing            constant / linear            ``c0`` [, ``c1 .. cd``]
initial, boundary  constant / linear            ``v0`` [, ``v1 .. vd``]
initial, boundary  product                      ``s``: ``s * x1 * ... * xd``
=================  ===========================  =================================
"""
import configparser
import math

import numpy as np

from . import forms
from .errors import ContractError
from .forms import coef
from .problem import Hyperrectangle, PdeProblem


def _floats(text, what):
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ContractError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    return np.array(vals)


def _killing_bounds(form, params, domain):
    # closed-form global bounds for the registry killing forms
    if form == "constant":
        return float(params[0]), float(params[0])
    if domain is None or not domain.bounded:
        raise ContractError("killing bounds must be given for a linear killing rate on an unbounded domain")
    c = params[1:]
    lo = params[0] + np.sum(np.minimum(c * domain.lower, c * domain.upper))
    hi = params[0] + np.sum(np.maximum(c * domain.lower, c * domain.upper))
    return float(lo), float(hi)


def parse_problem(text, source="<string>"):
    """Parse a problem definition; returns ``(problem, options)``.

    ``options`` holds sampler settings from ``[bounds]``: ``theta_max``
    (``None`` when absent) and ``global_bounds``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ContractError(f"{source}: {exc}") from None
    for sec in ("problem", "coefficients"):
        if not cp.has_section(sec):
            raise ContractError(f"{source}: missing [{sec}] section")
    known = {"problem", "domain", "coefficients", "bounds"}
    extra = set(cp.sections()) - known
    if extra:
        raise ContractError(f"{source}: unknown sections {sorted(extra)}")
    dim = cp.getint("problem", "dim")
    name = cp.get("problem", "name", fallback="")
    domain = None
    if cp.has_section("domain"):
        lo = _floats(cp.get("domain", "lower"), "domain.lower")
        hi = _floats(cp.get("domain", "upper"), "domain.upper")
        if lo.size != dim or hi.size != dim:
            raise ContractError(f"{source}: domain corners need {dim} values")
        domain = Hyperrectangle(lo, hi)

    co = cp["coefficients"]

    def form(key, table, kind, required=True, default=None):
        if key not in co:
            if required:
                raise ContractError(f"{source}: missing coefficients.{key}")
            return default
        fn = forms.lookup(table, co[key].strip(), kind)
        params = _floats(co.get(f"{key}_params", ""), f"{key}_params")
        return co[key].strip(), coef(fn, params if params.size else [0.0])

    _, drift = form("drift", forms.VECTOR_FORMS, "drift")
    _, diffusion = form("diffusion", forms.DIFFUSION_FORMS, "diffusion")
    _, initial = form("initial", forms.DATA_FORMS, "initial")
    kill_name, killing = form("killing", forms.SCALAR_FORMS, "killing", False,
                              ("constant", coef(forms.scalar_constant, [0.0])))
    boundary = None
    if domain is not None:
        got = form("boundary", forms.DATA_FORMS, "boundary")
        boundary = got[1]

    _check_sizes(dim, drift, diffusion, killing, kill_name, source)

    opts = {"theta_max": None, "global_bounds": False}
    if cp.has_section("bounds"):
        b = cp["bounds"]
        if "killing_lower" in b or "killing_upper" in b:
            kb = (float(b.get("killing_lower", "0")), float(b.get("killing_upper", "0")))
        else:
            kb = _killing_bounds(kill_name, killing.params, domain)
        if "theta_max" in b:
            opts["theta_max"] = float(b["theta_max"])
            if not opts["theta_max"] > 0 or math.isnan(opts["theta_max"]):
                raise ContractError(f"{source}: theta_max must be positive")
        opts["global_bounds"] = b.getboolean("global", fallback=False)
    else:
        kb = _killing_bounds(kill_name, killing.params, domain)
    problem = PdeProblem(dim, drift, diffusion, initial, killing=killing, boundary=boundary, domain=domain,
                         killing_bounds=kb, name=name)
    return problem, opts


def _check_sizes(dim, drift, diffusion, killing, kill_name, source):
    need = {forms.drift_constant: dim, forms.drift_linear: dim + dim * dim, forms.drift_grad_exp_bilinear: 1}
    if drift.params.size < need[drift.fn]:
        raise ContractError(f"{source}: drift_params needs {need[drift.fn]} values")
    if drift.fn is forms.drift_grad_exp_bilinear and dim != 2:
        raise ContractError(f"{source}: grad_exp_bilinear drift is two-dimensional")
    if diffusion.params.size < dim:
        raise ContractError(f"{source}: diffusion_params needs {dim} values")
    if kill_name == "linear" and killing.params.size < dim + 1:
        raise ContractError(f"{source}: killing_params needs {dim + 1} values")


def load_problem(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ContractError(f"cannot read problem file: {exc}") from None
    return parse_problem(text, source=str(path))
