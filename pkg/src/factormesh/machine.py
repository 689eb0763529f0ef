"""Discrete-event simulation of the message-passing cell grid.

A Machine is built from a MachineImage.  Each cell owns variable slots
(registers holding per-relation outgoing messages and a combined belief),
relation slots (micro-programmed table units), and shadow slots (local copies
of remote quantities kept fresh by routed packets).  Execution is fully
event-driven: a write that actually changes a stored value triggers the units
reading it, and recomputed messages are re-transmitted only when they moved by
at least the cell's change threshold.  Event order is the total order
(time, row-major cell id, sequence number), which makes runs bit-reproducible.

In SUMPROD/MINSUM modes the machine settles to quiescence (empty queue).  In
GIBBS mode each cell periodically resamples its variables from the fixed-point
conditionals given shadowed neighbor values and never quiesces on its own.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import fixedpoint as fp
from .image import (MachineImage, MAX_PROGRAM_OPS, DEFAULT_CAPACITIES,
                    DEFAULT_THRESH_LINEAR, DEFAULT_THRESH_LOG, gibbs_var_cost,
                    SUMPROD, MINSUM, GIBBS, VTOF, FTOV, VALUE,
                    Capacities, parse_image)
from .rng import raw64, uniform01


class MachineError(ValueError):
    pass


# ---------------------------------------------------------------------------
# exact vectorized fixed-point helpers (must agree with the scalar ones)
# ---------------------------------------------------------------------------

def _rne_div_vec(num, den):
    # round half to even; num >= 0, den > 0
    q = num // den
    r = num - q * den
    up = (2 * r > den) | ((2 * r == den) & (q % 2 == 1))
    return q + up


def _mul_u16_vec(a, b):
    # 2*a*b is never an odd multiple of 65535, so ties cannot occur
    p = a * b
    return (2 * p + fp.U16_MAX) // (2 * fp.U16_MAX)


def _norm_linear_vec(v):
    m = int(v.max())
    if m == 0:
        return v
    return _rne_div_vec(v * fp.U16_MAX, m)


def _norm_log_vec(v):
    m = int(v.max())
    return np.clip(v - m, fp.Q88_MIN, fp.Q88_MAX)


# ---------------------------------------------------------------------------
# run statistics
# ---------------------------------------------------------------------------

@dataclass
class Stats:
    activations: int = 0
    packets: int = 0
    flush_packets: int = 0
    hops: int = 0
    peak_link_occupancy: int = 0
    cycles: int = 0
    quiescent: bool = False

    def energy_proxy(self) -> float:
        return self.activations + 0.1 * self.hops

    def text(self) -> str:
        # energy formatted from integers so reruns are byte-identical
        tenths = 10 * self.activations + self.hops
        return ("activations=%d\npackets=%d\nflush_packets=%d\nhops=%d\n"
                "peak_link_occupancy=%d\ncycles=%d\nenergy_proxy=%d.%d\n"
                "quiescent=%s\n"
                % (self.activations, self.packets, self.flush_packets,
                   self.hops, self.peak_link_occupancy, self.cycles,
                   tenths // 10, tenths % 10,
                   "true" if self.quiescent else "false"))


# ---------------------------------------------------------------------------
# runtime cell structures
# ---------------------------------------------------------------------------

class _Var:
    __slots__ = ("cell", "slot", "vid", "card", "evidence", "value",
                 "in_msgs", "out_msgs", "belief", "attached", "local_rels",
                 "counts", "uses")

    def __init__(self, cell, slot, vid, card, evidence):
        self.cell = cell
        self.slot = slot
        self.vid = vid
        self.card = card
        self.evidence = evidence
        self.value = evidence if evidence is not None else 0
        self.in_msgs = {}       # fid -> message tuple
        self.out_msgs = {}      # fid -> message tuple
        self.belief = None
        self.attached = []      # sorted fids
        self.local_rels = {}    # fid -> _Rel in the same cell
        self.counts = [0] * card
        self.uses = []          # GIBBS: list of (rel, scope position)


class _Shadow:
    __slots__ = ("cell", "slot", "vid", "card", "src", "role", "fid",
                 "data", "value", "consumers", "wired")

    def __init__(self, cell, slot, vid, card, src, role, fid):
        self.cell = cell
        self.slot = slot
        self.vid = vid
        self.card = card
        self.src = src
        self.role = role
        self.fid = fid
        self.data = None        # message tuple (VTOF / FTOV)
        self.value = 0          # domain value (VALUE)
        self.consumers = []     # rels reading this slot
        self.wired = False


class _Rel:
    __slots__ = ("cell", "slot", "fid", "refs", "shape", "strides",
                 "table", "table_nd", "prog", "cost", "pending", "out_vids")

    def __init__(self, cell, slot, fid, refs, shape, table, prog):
        self.cell = cell
        self.slot = slot
        self.fid = fid
        self.refs = refs        # per scope position: ("v", _Var) or ("h", _Shadow)
        self.shape = shape
        strides = [1] * len(shape)
        for i in range(len(shape) - 2, -1, -1):
            strides[i] = strides[i + 1] * shape[i + 1]
        self.strides = strides
        self.table = table      # flat tuple of ints, last scope position fastest
        self.table_nd = np.array(table, dtype=np.int64).reshape(shape)
        self.prog = prog
        self.cost = max(1, len(prog))
        self.pending = False
        self.out_vids = [r[1].vid for r in refs]


class _Cell:
    __slots__ = ("r", "c", "cid", "vars", "rels", "shadows", "thresh",
                 "period", "phase", "tick_idx", "tick_budget", "tick_cost",
                 "plan")

    def __init__(self, r, c, cid):
        self.r = r
        self.c = c
        self.cid = cid
        self.vars = []          # _Var in slot order
        self.rels = []          # _Rel in slot order
        self.shadows = {}       # slot -> _Shadow
        self.thresh = None
        self.period = None
        self.phase = 0
        self.tick_idx = 0
        self.tick_budget = None
        self.tick_cost = 0
        self.plan = []          # GIBBS: (var, [(rel, pos), ...]) in slot order


# ---------------------------------------------------------------------------
# the machine
# ---------------------------------------------------------------------------

class Machine:
    """Event-driven simulator over a loaded machine image."""

    def __init__(self, image: MachineImage, capacities: Capacities = DEFAULT_CAPACITIES,
                 trace: bool = False, noise_lsbs: int = 0):
        if isinstance(image, str):
            image = parse_image(image)
        self.image = image
        self.mode = image.mode
        self.seed = image.seed
        self.grid = image.grid
        self.linear = image.mode != MINSUM
        self.stats = Stats()
        self.trace = [] if trace else None
        self.noise_lsbs = noise_lsbs
        self._noise_ctr = 0
        self._heap = []
        self._seq = 0
        self.time = 0
        self._links = {}        # (r, c, dir) -> next free cycle
        self._build(image, capacities)
        self._init_flush()

    # -- construction -------------------------------------------------------

    def _build(self, image, cap):
        R, C = image.grid
        self.cells = {}
        self.var_owner = {}
        default_thresh = DEFAULT_THRESH_LINEAR if self.linear else DEFAULT_THRESH_LOG
        for coord, ci in sorted(image.cells.items()):
            cell = _Cell(ci.r, ci.c, ci.r * C + ci.c)
            self.cells[coord] = cell
            cell.thresh = ci.thresh if ci.thresh is not None else default_thresh
            cell.period = ci.gibbs_period
            cell.phase = ci.gibbs_phase or 0
            if len(ci.var_slots) > cap.var_slots:
                raise MachineError("cell (%d, %d): too many variable slots" % coord)
            if len(ci.shadow_slots) > cap.shadow_slots:
                raise MachineError("cell (%d, %d): too many shadow slots" % coord)
            if len(ci.rel_slots) > cap.rel_slots:
                raise MachineError("cell (%d, %d): too many relation slots" % coord)
            vslots = {}
            hslots = {}
            for vs in sorted(ci.var_slots, key=lambda s: s.slot):
                if vs.card > cap.max_cardinality:
                    raise MachineError("variable %d: cardinality above limit" % vs.var_id)
                if vs.var_id in self.var_owner:
                    raise MachineError("variable %d owned by two cells" % vs.var_id)
                if vs.slot in vslots:
                    raise MachineError("cell (%d, %d): duplicate variable slot %d"
                                       % (ci.r, ci.c, vs.slot))
                var = _Var(cell, vs.slot, vs.var_id, vs.card, vs.evidence)
                vslots[vs.slot] = ("v", var)
                cell.vars.append(var)
                self.var_owner[vs.var_id] = var
            for sh in sorted(ci.shadow_slots, key=lambda s: s.slot):
                if sh.slot in hslots:
                    raise MachineError("cell (%d, %d): duplicate shadow slot %d"
                                       % (ci.r, ci.c, sh.slot))
                if sh.card > cap.max_cardinality:
                    raise MachineError("shadow of %d: cardinality above limit" % sh.var_id)
                shadow = _Shadow(cell, sh.slot, sh.var_id, sh.card,
                                 sh.src, sh.role, sh.fid)
                if self.linear:
                    shadow.data = (fp.U16_MAX,) * sh.card
                else:
                    shadow.data = (0,) * sh.card
                hslots[sh.slot] = ("h", shadow)
                cell.shadows[sh.slot] = shadow
            words = 0
            for rs in sorted(ci.rel_slots, key=lambda s: s.slot):
                refs = []
                for kind, sl in rs.scope_refs:
                    if kind == "V":
                        ent = vslots.get(sl)
                        if ent is None:
                            raise MachineError("relation %d: dangling variable slot V%d"
                                               % (rs.factor_id, sl))
                    else:
                        ent = hslots.get(sl)
                        if ent is None:
                            raise MachineError("relation %d: dangling shadow slot H%d"
                                               % (rs.factor_id, sl))
                    refs.append(ent)
                shape = tuple(r[1].card for r in refs)
                size = 1
                for c in shape:
                    size *= c
                if size != len(rs.table):
                    raise MachineError("relation %d: table has %d words, scope needs %d"
                                       % (rs.factor_id, len(rs.table), size))
                words += len(rs.table)
                if len(rs.prog) > MAX_PROGRAM_OPS:
                    raise MachineError("relation %d: program too long" % rs.factor_id)
                rel = _Rel(cell, rs.slot, rs.factor_id, refs, shape,
                           tuple(rs.table), list(rs.prog))
                cell.rels.append(rel)
                for kind, obj in refs:
                    if kind == "h":
                        obj.consumers.append(rel)
                self._check_program(rel)
            if words > cap.table_words:
                raise MachineError("cell (%d, %d): table memory over capacity" % coord)

        # wire index: quantity key -> list of (dst cell, dst slot, hops)
        self.wire_index = {}
        self.last_sent = {}
        for w in image.wires:
            dst = self.cells.get(tuple(w.dst))
            src = self.cells.get(tuple(w.src))
            if dst is None or src is None:
                raise MachineError("wire for variable %d references a cell with no config"
                                   % w.var_id)
            shadow = dst.shadows.get(w.dst_slot)
            if shadow is None:
                raise MachineError("wire for variable %d: destination slot %d is not a shadow"
                                   % (w.var_id, w.dst_slot))
            if shadow.vid != w.var_id:
                raise MachineError("wire/shadow variable mismatch at slot %d" % w.dst_slot)
            if shadow.src != tuple(w.src):
                raise MachineError("shadow for variable %d expects a different producer"
                                   % w.var_id)
            if shadow.role == VTOF:
                owner = self.var_owner.get(w.var_id)
                if owner is None or owner.cell is not src:
                    raise MachineError("wire source does not own variable %d" % w.var_id)
                key = (src.cid, "vf", w.var_id, shadow.fid)
            elif shadow.role == FTOV:
                if not any(rel.fid == shadow.fid for rel in src.rels):
                    raise MachineError("wire source has no relation %d" % shadow.fid)
                key = (src.cid, "fv", shadow.fid, w.var_id)
            else:
                owner = self.var_owner.get(w.var_id)
                if owner is None or owner.cell is not src:
                    raise MachineError("wire source does not own variable %d" % w.var_id)
                key = (src.cid, "val", w.var_id, 0)
            shadow.wired = True
            self.wire_index.setdefault(key, []).append(
                (dst, w.dst_slot, abs(w.src[0] - w.dst[0]) + abs(w.src[1] - w.dst[1])))

        for cell in self.cells.values():
            for shadow in cell.shadows.values():
                if not shadow.wired:
                    raise MachineError("shadow of variable %d in cell (%d, %d) has no producer"
                                       % (shadow.vid, cell.r, cell.c))

        # attach relations to their local/remote variables
        for cell in self.cells.values():
            for rel in cell.rels:
                for pos, (kind, obj) in enumerate(rel.refs):
                    if kind == "v":
                        var = obj
                        if rel.fid not in var.local_rels:
                            var.local_rels[rel.fid] = rel
                        if rel.fid not in var.in_msgs:
                            var.in_msgs[rel.fid] = self._uniform(var.card)
                    else:
                        if obj.role == VTOF and obj.fid != rel.fid:
                            raise MachineError(
                                "relation %d reads a shadow bound to relation %s"
                                % (rel.fid, obj.fid))
        # remote factor inputs arrive through FTOV shadows of the owner cell
        for cell in self.cells.values():
            for shadow in cell.shadows.values():
                if shadow.role == FTOV:
                    owner = self.var_owner.get(shadow.vid)
                    if owner is None or owner.cell is not cell:
                        raise MachineError("FTOV shadow of %d must sit in the owning cell"
                                           % shadow.vid)
                    owner.in_msgs[shadow.fid] = self._uniform(owner.card)
        for var in self.var_owner.values():
            var.attached = sorted(var.in_msgs)
            for fid in var.attached:
                var.out_msgs[fid] = self._uniform(var.card)
            self._refresh_var(var)

        if self.mode == GIBBS:
            for cell in self.cells.values():
                if cell.vars and not cell.period:
                    raise MachineError("cell (%d, %d) owns variables but has no "
                                       "resample period" % (cell.r, cell.c))
                for rel in cell.rels:
                    for pos, (kind, obj) in enumerate(rel.refs):
                        if kind == "h" and obj.role != VALUE:
                            raise MachineError("relation %d: sampling needs VALUE shadows"
                                               % rel.fid)
                        if kind == "v":
                            obj.uses.append((rel, pos))
                for var in cell.vars:
                    cell.plan.append((var, var.uses))
                    cell.tick_cost += gibbs_var_cost(len(var.uses))

    def _uniform(self, card):
        return (fp.U16_MAX,) * card if self.linear else (0,) * card

    def _check_program(self, rel):
        """Static shape check: axis and operand indices must be in range."""
        k = len(rel.shape)
        for op in rel.prog:
            name = op[0]
            if name in ("MUL", "ADD", "MAX"):
                axis, src = op[1], op[2]
                if not (0 <= axis < k) or not (0 <= src < k):
                    raise MachineError("relation %d: operand out of range in %s"
                                       % (rel.fid, name))
                if rel.refs[src][1].card != rel.shape[axis]:
                    raise MachineError("relation %d: input %d does not fit axis %d"
                                       % (rel.fid, src, axis))
            elif name in ("SUM_REDUCE", "MAX_REDUCE"):
                if not (0 <= op[1] < k):
                    raise MachineError("relation %d: reduce axis out of range" % rel.fid)
            elif name in ("NORMALIZE", "WTA"):
                if not (0 <= op[1] < k):
                    raise MachineError("relation %d: output position out of range" % rel.fid)
            elif name == "COPY":
                if not (0 <= op[1] < k):
                    raise MachineError("relation %d: COPY input out of range" % rel.fid)
            elif name == "LOAD_TABLE_SLICE" and op[1] is not None:
                if not (0 <= op[1] < k):
                    raise MachineError("relation %d: slice axis out of range" % rel.fid)

    # -- event plumbing -----------------------------------------------------

    def _push(self, time, cell, kind, payload):
        self._seq += 1
        heapq.heappush(self._heap, (time, cell.cid, self._seq, kind, cell, payload))

    def _pend_exec(self, rel, time):
        if not rel.pending:
            rel.pending = True
            self._push(time, rel.cell, "E", rel)

    def _trace(self, cycle, cell, event, vid, detail):
        if self.trace is not None:
            self.trace.append("%d,%d,%d,%s,%d,%s"
                              % (cycle, cell.r, cell.c, event, vid, detail))

    def _init_flush(self):
        """Startup: publish every variable's initial message/value (the
        sentinel last-sent forces a first packet), then run every relation
        once.  Work within a cell is serialized, so later units start after
        the cycles charged to earlier ones."""
        for coord in sorted(self.cells):
            cell = self.cells[coord]
            lat = 0
            for var in cell.vars:
                if var.evidence is not None:
                    self._trace(0, cell, "CLAMP", var.vid, var.evidence)
                self._emit_var(var, lat)
                lat += 1
            if self.mode == GIBBS:
                if cell.period:
                    self._push(cell.period + cell.phase, cell, "T", None)
            else:
                for rel in cell.rels:
                    self._pend_exec(rel, lat)
                    lat += rel.cost

    def step(self) -> bool:
        """Process the single globally next event.  False when idle."""
        if not self._heap:
            return False
        time, _cid, _seq, kind, cell, payload = heapq.heappop(self._heap)
        self.time = time
        if kind == "E":
            self._on_exec(cell, payload, time)
        elif kind == "S":
            self._on_send(cell, payload, time)
        elif kind == "D":
            self._on_deliver(cell, payload, time)
        elif kind == "T":
            self._on_tick(cell, time)
        elif kind == "I":
            self._on_inject(cell, payload, time)
        return True

    def run_until_quiescent(self, max_cycles: int = 100000):
        """Drain the event queue; give up past max_cycles (returns False)."""
        while self._heap and self._heap[0][0] <= max_cycles:
            self.step()
        quiescent = not self._heap
        self.stats.quiescent = quiescent
        self.stats.cycles = self.time if quiescent else max_cycles
        return self.stats, quiescent

    def run_ticks(self, ticks: int):
        """GIBBS: run until every variable-owning cell resampled `ticks` times."""
        if self.mode != GIBBS:
            raise MachineError("tick-bounded runs only apply to GIBBS mode")
        for cell in self.cells.values():
            cell.tick_budget = ticks
        while self._heap:
            self.step()
        self.stats.quiescent = False
        self.stats.cycles = self.time
        return self.stats

    # -- event handlers -----------------------------------------------------

    def _on_exec(self, cell, rel, time):
        rel.pending = False
        outs = self._exec_program(rel)
        self.stats.activations += 1
        self._trace(time, cell, "UPDATE", rel.fid, len(rel.prog))
        avail = time + rel.cost
        for pos, payload in outs:
            kind, obj = rel.refs[pos]
            vid = rel.out_vids[pos]
            if kind == "v":
                var = obj
                if var.in_msgs.get(rel.fid) != payload:
                    var.in_msgs[rel.fid] = payload
                    self._emit_var(var, avail)
            else:
                self._gate_send((cell.cid, "fv", rel.fid, vid), payload, avail, cell)

    def _refresh_var(self, var):
        """Recompute outgoing messages and belief from stored inputs."""
        card = var.card
        if var.evidence is not None:
            if self.linear:
                ind = tuple(fp.U16_MAX if a == var.evidence else 0 for a in range(card))
            else:
                ind = tuple(0 if a == var.evidence else fp.Q88_MIN for a in range(card))
            var.belief = ind
            return {fid: ind for fid in var.attached}
        msgs = [np.array(var.in_msgs[fid], dtype=np.int64) for fid in var.attached]
        n = len(msgs)
        if n == 0:
            var.belief = self._uniform(card)
            return {}
        # prefix/suffix products give each exclude-one combination one way
        ident = np.full(card, fp.U16_MAX if self.linear else 0, dtype=np.int64)
        pre = [ident]
        for m in msgs:
            pre.append(self._combine(pre[-1], m))
        suf = [ident]
        for m in reversed(msgs):
            suf.append(self._combine(m, suf[-1]))
        suf.reverse()
        outs = {}
        for i, fid in enumerate(var.attached):
            vec = self._combine(pre[i], suf[i + 1])
            outs[fid] = tuple(int(x) for x in self._norm(vec))
        var.belief = tuple(int(x) for x in self._norm(pre[n]))
        return outs

    def _combine(self, a, b):
        if self.linear:
            return _mul_u16_vec(a, b)
        return np.clip(a + b, fp.Q88_MIN, fp.Q88_MAX)

    def _norm(self, v):
        return _norm_linear_vec(v) if self.linear else _norm_log_vec(v)

    def _emit_var(self, var, time):
        """Publish changed outgoing messages to local relations and wires."""
        cell = var.cell
        if self.mode == GIBBS:
            # sampling cells exchange bare values, not message vectors
            key = (cell.cid, "val", var.vid, 0)
            if key in self.wire_index:
                self._gate_send(key, var.value, time, cell, value_packet=True)
            return
        outs = self._refresh_var(var)
        for fid in var.attached:
            new = outs[fid]
            if var.out_msgs[fid] != new:
                var.out_msgs[fid] = new
                rel = var.local_rels.get(fid)
                if rel is not None:
                    self._pend_exec(rel, time)
            key = (cell.cid, "vf", var.vid, fid)
            if key in self.wire_index:
                self._gate_send(key, var.out_msgs[fid], time, cell)

    def _gate_send(self, key, payload, time, cell, value_packet=False):
        last = self.last_sent.get(key)
        if last is None:
            flush = True
        else:
            flush = False
            if value_packet:
                if payload == last:
                    return
            elif cell.thresh > 0:
                diff = max(abs(a - b) for a, b in zip(payload, last))
                if diff < cell.thresh:
                    return
        self.last_sent[key] = payload
        self._push(time, cell, "S", (key, payload, flush))

    def _on_send(self, cell, payload, time):
        key, value, flush = payload
        for dst, slot, hops in self.wire_index[key]:
            arrival = self._route(cell, dst, time)
            self.stats.packets += 1
            if flush:
                self.stats.flush_packets += 1
            self.stats.hops += hops
            vid = key[2] if key[1] != "fv" else key[3]
            self._trace(time, cell, "SEND", vid, hops)
            self._push(arrival, dst, "D", (slot, value, hops))

    def _route(self, src, dst, time):
        """Reserve the dimension-order path; one packet per link per cycle."""
        t = time
        links = self._links
        r, c = src.r, src.c
        if (r, c) == (dst.r, dst.c):
            path = [(r, c, "L")]
        else:
            path = []
            while c != dst.c:
                step = 1 if dst.c > c else -1
                path.append((r, c, "E" if step > 0 else "W"))
                c += step
            while r != dst.r:
                step = 1 if dst.r > r else -1
                path.append((r, c, "S" if step > 0 else "N"))
                r += step
        for link in path:
            free = links.get(link, 0)
            depart = free if free > t else t
            wait = depart - t
            if wait + 1 > self.stats.peak_link_occupancy:
                self.stats.peak_link_occupancy = wait + 1
            links[link] = depart + 1
            t = depart + 1
        return t

    def _on_deliver(self, cell, payload, time):
        slot, value, hops = payload
        shadow = cell.shadows[slot]
        self._trace(time, cell, "DELIVER", shadow.vid, hops)
        if shadow.role == FTOV:
            var = self.var_owner[shadow.vid]
            shadow.data = value
            if var.in_msgs.get(shadow.fid) != value:
                var.in_msgs[shadow.fid] = value
                self._emit_var(var, time)
        elif shadow.role == VTOF:
            if shadow.data != value:
                shadow.data = value
                for rel in shadow.consumers:
                    self._pend_exec(rel, time)
        else:
            shadow.value = value

    def _on_tick(self, cell, time):
        k = cell.tick_idx
        changed = []
        for var, uses in cell.plan:
            if var.evidence is None:
                cond = [1] * var.card
                for rel, pos in uses:
                    base = 0
                    for q, (kind, obj) in enumerate(rel.refs):
                        if q == pos:
                            continue
                        base += obj.value * rel.strides[q]
                    sv = rel.strides[pos]
                    tbl = rel.table
                    for a in range(var.card):
                        cond[a] *= tbl[base + a * sv]
                self.stats.activations += len(uses)
                total = sum(cond)
                if total > 0:
                    target = uniform01(self.seed, var.vid, k) * total
                    acc = 0
                    val = var.card - 1
                    for a in range(var.card):
                        acc += cond[a]
                        if acc > target:
                            val = a
                            break
                    if val != var.value:
                        var.value = val
                        changed.append(var)
            var.counts[var.value] += 1
            self._trace(time, cell, "SAMPLE", var.vid, var.value)
        cell.tick_idx = k + 1
        out_t = time + cell.tick_cost
        for var in changed:
            key = (cell.cid, "val", var.vid, 0)
            if key in self.wire_index:
                self._gate_send(key, var.value, out_t, cell, value_packet=True)
        if cell.tick_budget is None or cell.tick_idx < cell.tick_budget:
            self._push(time + cell.period, cell, "T", None)

    def _on_inject(self, cell, payload, time):
        var, value = payload
        var.evidence = value
        var.value = value
        self._trace(time, cell, "CLAMP", var.vid, value)
        self._emit_var(var, time)

    # -- micro-program interpreter ------------------------------------------

    def _exec_program(self, rel):
        shape = rel.shape
        k = len(shape)
        tacc = None
        outs = []

        def fetch(i):
            kind, obj = rel.refs[i]
            vec = obj.out_msgs[rel.fid] if kind == "v" else obj.data
            return np.array(vec, dtype=np.int64)

        def bshape(axis):
            s = [1] * k
            s[axis] = shape[axis]
            return s

        for op in rel.prog:
            name = op[0]
            if name == "LOAD_TABLE_SLICE":
                tacc = rel.table_nd
            elif name == "MUL":
                tacc = _mul_u16_vec(tacc, fetch(op[2]).reshape(bshape(op[1])))
            elif name == "ADD":
                tacc = np.clip(tacc + fetch(op[2]).reshape(bshape(op[1])),
                               fp.Q88_MIN, fp.Q88_MAX)
            elif name == "MAX":
                tacc = np.maximum(tacc, fetch(op[2]).reshape(bshape(op[1])))
            elif name == "SUM_REDUCE":
                tacc = tacc.sum(axis=op[1], keepdims=True)
            elif name == "MAX_REDUCE":
                tacc = tacc.max(axis=op[1], keepdims=True)
            elif name == "COPY":
                tacc = fetch(op[1]).reshape(bshape(op[1]))
            elif name in ("NORMALIZE", "WTA"):
                j = op[1]
                if tacc.size != shape[j]:
                    raise MachineError("relation %d: %s before reducing other axes"
                                       % (rel.fid, name))
                vec = tacc.reshape(shape[j])
                if name == "NORMALIZE":
                    vec = self._norm(vec)
                else:
                    best = int(np.argmax(vec))
                    if self.linear:
                        vec = np.where(np.arange(shape[j]) == best, fp.U16_MAX, 0)
                    else:
                        vec = np.where(np.arange(shape[j]) == best, 0, fp.Q88_MIN)
                if self.noise_lsbs:
                    vec = self._apply_noise(vec)
                outs.append((j, tuple(int(x) for x in vec)))
            elif name == "MUL_COND":
                pass        # sampling sections run inside ticks, not here
        return outs

    def _apply_noise(self, vec):
        span = 2 * self.noise_lsbs + 1
        noise = []
        for _ in range(len(vec)):
            self._noise_ctr += 1
            draw = raw64(self.seed, (1 << 48) | 1, self._noise_ctr) % span
            noise.append(draw - self.noise_lsbs)
        vec = vec + np.array(noise, dtype=np.int64)
        if self.linear:
            return np.clip(vec, 0, fp.U16_MAX)
        return np.clip(vec, fp.Q88_MIN, fp.Q88_MAX)

    # -- external surface ----------------------------------------------------

    def inject_evidence(self, vid: int, value: int, at_time: int = 0):
        var = self.var_owner.get(vid)
        if var is None:
            raise MachineError("unknown variable %d" % vid)
        if not (0 <= value < var.card):
            raise MachineError("value %d outside domain of variable %d" % (value, vid))
        self._push(at_time, var.cell, "I", (var, value))

    def read_beliefs(self):
        """Dequantized per-variable beliefs plus argmax assignment.

        GIBBS mode reports empirical tick frequencies as beliefs and the
        current sampled state as the assignment."""
        beliefs = {}
        assignment = {}
        for vid in sorted(self.var_owner):
            var = self.var_owner[vid]
            if self.mode == GIBBS:
                total = sum(var.counts)
                if total == 0:
                    vec = [1.0 / var.card] * var.card
                else:
                    vec = [c / total for c in var.counts]
                beliefs[vid] = vec
                assignment[vid] = var.value
            else:
                if self.linear:
                    vec = [x / fp.U16_MAX for x in var.belief]
                else:
                    anchor = max(var.belief)
                    vec = [math.exp((x - anchor) / fp.Q88_ONE) for x in var.belief]
                s = sum(vec)
                if s <= 0:
                    vec = [1.0 / var.card] * var.card
                else:
                    vec = [x / s for x in vec]
                beliefs[vid] = vec
                best = 0
                for a in range(1, var.card):
                    if var.belief[a] > var.belief[best]:
                        best = a
                assignment[vid] = best
        return beliefs, assignment

    def read_assignment(self):
        """Per-variable argmax (or the sampled value in GIBBS mode), without
        the float belief conversion; cheap enough to poll every cycle."""
        assignment = {}
        for vid, var in self.var_owner.items():
            if self.mode == GIBBS:
                assignment[vid] = var.value
                continue
            best = 0
            for a in range(1, var.card):
                if var.belief[a] > var.belief[best]:
                    best = a
            assignment[vid] = best
        return assignment

    def read_state(self):
        return {vid: self.var_owner[vid].value for vid in sorted(self.var_owner)}

    def verify_quiescent(self):
        """Recompute everything and measure drift against stored copies.

        Returns {"local": d1, "remote": d2}: the largest deviation between a
        recomputed message and (local) what its consumer holds, or (remote)
        the last-sent copy.  At quiescence local must be 0 and remote below
        the sending cell's threshold."""
        local = 0
        remote = 0
        for cell in self.cells.values():
            for var in cell.vars:
                outs = self._refresh_var(var)
                for fid in var.attached:
                    d = max(abs(a - b) for a, b in zip(outs[fid], var.out_msgs[fid]))
                    local = max(local, d)
                    key = (cell.cid, "vf", var.vid, fid)
                    if key in self.wire_index and key in self.last_sent:
                        d = max(abs(a - b)
                                for a, b in zip(outs[fid], self.last_sent[key]))
                        remote = max(remote, d)
            if self.mode == GIBBS:
                continue
            for rel in cell.rels:
                for pos, payload in self._exec_program(rel):
                    kind, obj = rel.refs[pos]
                    vid = rel.out_vids[pos]
                    if kind == "v":
                        held = obj.in_msgs.get(rel.fid)
                        d = max(abs(a - b) for a, b in zip(payload, held))
                        local = max(local, d)
                    else:
                        key = (cell.cid, "fv", rel.fid, vid)
                        if key in self.last_sent:
                            d = max(abs(a - b)
                                    for a, b in zip(payload, self.last_sent[key]))
                            remote = max(remote, d)
        return {"local": local, "remote": remote}

    def trace_text(self) -> str:
        if self.trace is None:
            raise MachineError("tracing was not enabled")
        return "cycle,cell_row,cell_col,event,var_id,detail\n" + \
            "".join(row + "\n" for row in self.trace)


# ---------------------------------------------------------------------------
# module-level wrappers
# ---------------------------------------------------------------------------

def load_image(text, capacities: Capacities = DEFAULT_CAPACITIES,
               trace: bool = False, noise_lsbs: int = 0) -> Machine:
    return Machine(text, capacities=capacities, trace=trace, noise_lsbs=noise_lsbs)


def run_until_quiescent(machine: Machine, max_cycles: int = 100000):
    return machine.run_until_quiescent(max_cycles)
