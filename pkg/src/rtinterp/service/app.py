"""HTTP interface: one streaming session per client, plus one-shot reconstruction."""
from __future__ import annotations

import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..core import NumericalError, RtiError
from ..runner import StreamingReconstructor, policy_from_doc
from ..splinalg import curvature_matrix
from .schemas import (Health, IntervalBatch, ReconstructOut, ReconstructRequest, SectionOut, SectionsOut,
                      SessionCreate, SessionCreated)


def _section_out(sec) -> SectionOut:
    return SectionOut(index=sec.index, x_start=sec.x_start, x_end=sec.x_end, coeffs=[float(c) for c in sec.coeffs])


def _reconstructor(policy, e0):
    try:
        cfg, params, stats = policy_from_doc(policy.model_dump())
        e0 = None if e0 is None else np.asarray(e0, dtype=float)
        if e0 is not None and e0.shape != (cfg.n_cont,):
            raise RtiError(f"e0 must have {cfg.n_cont} entries")
    except (RtiError, ValueError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return StreamingReconstructor(cfg, params, stats, e0)


def _push_all(rec: StreamingReconstructor, intervals) -> list:
    out = []
    try:
        for iv in intervals:
            sec = rec.push(iv.x, iv.y, iv.eps)
            if sec is not None:
                out.append(_section_out(sec))
    except NumericalError as exc:
        raise HTTPException(status_code=500, detail=str(exc)) from exc
    except (RtiError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return out


def create_app() -> FastAPI:
    app = FastAPI(title="rtinterp", version=__version__)
    sessions: dict[str, StreamingReconstructor] = {}
    locks: dict[str, threading.Lock] = {}
    registry_lock = threading.Lock()

    @app.get("/health", response_model=Health)
    def health():
        return Health(version=__version__, sessions=len(sessions))

    @app.post("/sessions", response_model=SessionCreated, status_code=201)
    def create_session(req: SessionCreate):
        rec = _reconstructor(req.policy, req.e0)
        sid = uuid.uuid4().hex
        with registry_lock:
            sessions[sid] = rec
            locks[sid] = threading.Lock()
        return SessionCreated(session_id=sid, d=rec.cfg.d, phi=rec.cfg.phi, kind=rec.params.kind)

    @app.post("/sessions/{session_id}/intervals", response_model=SectionsOut)
    def push_intervals(session_id: str, batch: IntervalBatch):
        with registry_lock:
            rec, lock = sessions.get(session_id), locks.get(session_id)
        if rec is None:
            raise HTTPException(status_code=404, detail="unknown session")
        # intervals of one session must be applied strictly in order
        with lock:
            secs = _push_all(rec, batch.intervals)
            return SectionsOut(session_id=session_id, received=rec.received, sections=secs)

    @app.delete("/sessions/{session_id}", status_code=204)
    def close_session(session_id: str):
        with registry_lock:
            if sessions.pop(session_id, None) is None:
                raise HTTPException(status_code=404, detail="unknown session")
            locks.pop(session_id, None)

    @app.post("/reconstruct", response_model=ReconstructOut)
    def reconstruct(req: ReconstructRequest):
        rec = _reconstructor(req.policy, req.e0)
        secs = _push_all(rec, req.intervals)
        scale = 1.0 if rec.stats is None else rec.stats.std
        curv = [float(np.asarray(s.coeffs) @ curvature_matrix(s.x_end - s.x_start, rec.cfg.d) @ np.asarray(s.coeffs))
                for s in secs]
        return ReconstructOut(sections=secs, loss=float(np.mean(curv)) / scale ** 2)

    return app


app = create_app()
