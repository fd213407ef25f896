"""Memory-side hardware: address generators, smart buffers, and the
run controller.

Each input array gets its own memory port, a word-address generator that
emits every needed bus word exactly once in ascending order, and a smart
buffer: a ring of element registers that keeps live data until every
window containing it has been exported, then lets it be overwritten.
Windows are exported as a parallel tap bundle plus a `window_data`
concatenation, one window per `fire` strobe.

Output arrays drain one element per cycle from result hold registers; the
controller spaces firings so drains never collide.  The controller FSM
walks IDLE -> FILL -> STEADY -> DRAIN -> DONE, and each rolled loop
contributes its own iteration FSM (eliminated entirely when the loop is
fully unrolled).
"""

from __future__ import annotations

from dataclasses import dataclass

from .ast_nodes import ArrayDecl
from .errors import ConfigError, RestrictionError
from .netlist import Comb, Fragment, Fsm, Port, Register, SigDecl
from .transforms import LoopSpec, ScalarizedKernel, Store, WindowSpec

MAX_EXPORT_WIDTH = 1024


def _bits(max_value: int) -> int:
    return max(1, int(max_value).bit_length())


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class BufferGeometry:
    """Compile-time constants of one input array's fetch/reuse engine."""

    array: str
    data_width: int
    data_signed: bool
    bus_width: int
    elems_per_word: int
    word_first: int          # first bus word fetched
    word_last: int           # last bus word fetched
    span: int                # ring positions a window reaches past its anchor
    cap: int                 # ring capacity in elements (multiple of epw)
    anchor_init: int         # fetch-relative position of the first window
    adv: int                 # anchor advance per firing
    adv_wrap: int            # advance applied on inner-count wrap (2D)
    wrap_every: int          # firings per wrap; 0 = never wrap
    tap_offsets: tuple[int, ...]  # anchor-relative positions, one per tap
    elem_first: int          # first element the kernel actually accesses
    elem_last: int           # last element it accesses
    extent_total: int        # declared array size (flat elements)

    @property
    def words_total(self) -> int:
        return self.word_last - self.word_first + 1

    @property
    def elems_accessed(self) -> int:
        return self.elem_last - self.elem_first + 1


def buffer_geometry(ws: WindowSpec, loop: LoopSpec, decl: ArrayDecl,
                    loads_order: list[int]) -> BufferGeometry:
    """Derive the fetch range, ring capacity, and per-fire advances.

    `loads_order` lists each tap's anchor-relative offset in load order.
    """
    ndim = len(ws.shape)
    lowers = {ix.var: ix.lower for ix in loop.indices}
    counts = {ix.var: ix.count for ix in loop.indices}
    order = {ix.var: k for k, ix in enumerate(loop.indices)}
    epw = ws.elems_per_word

    if ndim == 1:
        img_w = 1
        row_strides = (1,)
        extent_total = decl.extents[0]
    else:
        img_w = decl.extents[1]
        row_strides = (img_w, 1)
        extent_total = decl.extents[0] * decl.extents[1]

    # anchor element position at the first and last iteration, per dim
    first_dims, last_dims = [], []
    for d in range(ndim):
        var = ws.loop_vars[d]
        if var is None:
            first_dims.append(ws.base[d])
            last_dims.append(ws.base[d])
        else:
            coeff = ws.stride[d] // loop_step(loop, var)
            first_dims.append(coeff * lowers[var] + ws.base[d])
            last_dims.append(coeff * (lowers[var]
                                      + (counts[var] - 1) * loop_step(loop, var))
                             + ws.base[d])

    if ndim == 1:
        span = ws.shape[0]
        e0 = first_dims[0]
        e1 = last_dims[0] + ws.shape[0] - 1
        anchor0_abs = first_dims[0]
    else:
        # full rows are fetched; partial columns are fetched and ignored
        span = (ws.shape[0] - 1) * img_w + ws.shape[1]
        row0 = first_dims[0]
        row_end = last_dims[0] + ws.shape[0] - 1
        e0 = row0 * img_w
        e1 = row_end * img_w + img_w - 1
        anchor0_abs = first_dims[0] * img_w + first_dims[1]

    if e0 < 0 or e1 >= extent_total:
        raise RestrictionError(
            f"window of '{ws.array}' reaches elements {e0}..{e1}, outside"
            f" the declared extent {extent_total}")

    # per-fire advance: firings iterate the loop nest innermost-fastest
    if ndim == 2:
        r_var, c_var = ws.loop_vars
        if c_var is not None and r_var is None:
            raise RestrictionError(
                f"'{ws.array}' would be re-read every outer iteration;"
                " unsupported access pattern")
        inner_count = counts[c_var] if c_var else 0
        adv = ws.stride[1]
        adv_wrap = (ws.stride[0] * img_w
                    - (inner_count - 1) * ws.stride[1] if c_var else
                    ws.stride[0] * img_w)
        wrap_every = inner_count if c_var else 1
        if c_var is None and len(loop.indices) == 2:
            # row-only array inside a 2D nest: advance once per row
            adv = 0
            wrap_every = loop.indices[1].count
            adv_wrap = ws.stride[0] * img_w
    else:
        var = ws.loop_vars[0]
        if var is not None and len(loop.indices) == 2 \
                and order.get(var) == 1:
            raise RestrictionError(
                f"1-dimensional '{ws.array}' indexed by the inner loop"
                " would be re-read every row; unsupported")
        if var is not None and len(loop.indices) == 2 and order.get(var) == 0:
            adv = 0
            wrap_every = loop.indices[1].count
            adv_wrap = ws.stride[0]
        else:
            adv = ws.stride[0]
            adv_wrap = 0
            wrap_every = 0

    w0, w1 = e0 // epw, e1 // epw
    # span plus three bus words: one for the sliding overlap, two covering
    # the issue->land latency of the memory port (sustains one window per
    # cycle at full rate)
    cap = (_ceil_div(span, epw) + 3) * epw
    anchor_init = anchor0_abs - w0 * epw
    return BufferGeometry(
        ws.array, ws.data_width, decl.element.signed, ws.bus_width, epw,
        w0, w1, span, cap, anchor_init, adv, adv_wrap, wrap_every,
        tuple(loads_order), e0, e1, extent_total)


def loop_step(loop: LoopSpec, var: str) -> int:
    for ix in loop.indices:
        if ix.var == var:
            return ix.step
    return 1


def tap_offset(load_dims, ws: WindowSpec, img_w: int) -> int:
    """Anchor-relative ring offset of one load."""
    if len(ws.shape) == 1:
        return load_dims[0].const - ws.base[0]
    return ((load_dims[0].const - ws.base[0]) * img_w
            + (load_dims[1].const - ws.base[1]))


def gen_address_stream(ws: WindowSpec, trip: int,
                       extents: tuple[int, ...] | None = None,
                       counts: tuple[int, ...] | None = None,
                       ) -> list[int]:
    """Bus-word addresses covering the elements of all `trip` windows,
    each word exactly once, ascending (loops starting at zero).

    2-D callers pass the array extents and the per-dimension iteration
    counts; 2-D fetches cover full rows."""
    epw = ws.elems_per_word
    if len(ws.shape) == 1:
        e0 = ws.base[0]
        e1 = ws.base[0] + (trip - 1) * ws.stride[0] + ws.shape[0] - 1
        return list(range(e0 // epw, e1 // epw + 1))
    assert counts is not None and extents is not None
    img_w = extents[1]
    row0 = ws.base[0]
    row_end = ws.base[0] + (counts[0] - 1) * ws.stride[0] + ws.shape[0] - 1
    e0 = row0 * img_w
    e1 = row_end * img_w + img_w - 1
    return list(range(e0 // epw, e1 // epw + 1))


# --- fragment construction helpers -----------------------------------------------


class _Builder:
    """Thin layer over Fragment that keeps widths exact: arithmetic grows,
    COPY resizes explicitly, comparisons yield control bits."""

    def __init__(self, frag: Fragment, prefix: str):
        self.f = frag
        self.prefix = prefix
        self.n = 0
        self.widths: dict[str, SigDecl] = {}

    def name(self, suffix: str) -> str:
        return f"{self.prefix}_{suffix}"

    def tmp(self) -> str:
        self.n += 1
        return f"{self.prefix}_t{self.n}"

    def decl(self, name, width, signed=False, control=False) -> SigDecl:
        d = SigDecl(name, width, signed, control)
        self.widths[name] = d
        return d

    def width_of(self, op) -> int:
        if isinstance(op, int):
            return max(1, op.bit_length()) if op >= 0 else \
                (-op - 1).bit_length() + 1
        return self.widths[op].width

    def op(self, opcode, operands, width, name=None, signed=False,
           control=False, lo=0) -> str:
        d = self.decl(name or self.tmp(), width, signed, control)
        self.f.comb(opcode, d, operands, lo)
        return d.name

    def add(self, a, b, name=None) -> str:
        w = max(self.width_of(a), self.width_of(b)) + 1
        return self.op("ADD", (a, b), w, name)

    def sub(self, a, b, name=None) -> str:
        w = max(self.width_of(a), self.width_of(b)) + 1
        return self.op("SUB", (a, b), w, name, signed=True)

    def copy(self, a, width, name=None, control=False) -> str:
        return self.op("COPY", (a,), width, name, control=control)

    def cmp(self, opcode, a, b, name=None) -> str:
        return self.op(opcode, (a, b), 1, name, control=True)

    def mux(self, cond, a, b, width, name=None, control=False) -> str:
        return self.op("MUX", (cond, a, b), width, name, control=control)

    def land(self, a, b, name=None) -> str:
        return self.op("AND", (a, b), 1, name, control=True)

    def lor(self, a, b, name=None) -> str:
        return self.op("OR", (a, b), 1, name, control=True)

    def lnot(self, a, name=None) -> str:
        return self.op("NOT", (a,), 1, name, control=True)

    def all_of(self, signals, name=None) -> str:
        assert signals
        acc = signals[0]
        for s in signals[1:]:
            acc = self.land(acc, s)
        if name:
            return self.copy(acc, 1, name, control=True)
        return acc

    def register(self, name, width, d, reset=0, en=None, kind="control",
                 signed=False, control=False) -> str:
        q = self.decl(name, width, signed, control)
        self.f.reg(q, d, reset, en, kind)
        return q.name

    def mod_add(self, a, inc: int, mod: int, width: int) -> str:
        """(a + inc) % mod for 0 <= a < mod, 0 <= inc < mod."""
        s = self.add(a, inc % mod)
        over = self.cmp("GE", s, mod)
        wrapped = self.copy(self.sub(s, mod), width)
        return self.mux(over, wrapped, self.copy(s, width), width)


# --- smart buffer -----------------------------------------------------------------


def build_smart_buffer(geo: BufferGeometry, multi: bool, fire: str,
                       ) -> Fragment:
    """Fetch engine + reuse ring + window export for one input array.

    Boundary signals provided: `<mem>_addr/_data/_en` (memory port),
    `sb_<arr>_ready` (a full window is present), `sb_<arr>_tap<k>` (window
    elements), `window_data[_<arr>]` and the shared `fire` consumption
    strobe (required).
    """
    arr = geo.array
    suffix = f"_{arr}" if multi else ""
    frag = Fragment(f"smart_buffer_{arr}")
    b = _Builder(frag, f"sb_{arr}")
    taps = len(geo.tap_offsets)
    if taps * geo.data_width > MAX_EXPORT_WIDTH:
        raise ConfigError(
            f"window export of '{arr}' is {taps * geo.data_width} bits"
            f" (limit {MAX_EXPORT_WIDTH})")

    epw = geo.elems_per_word
    cap = geo.cap
    cap_words = cap // epw
    ctr_max = geo.words_total * epw + geo.span + cap + 2
    ctr_w = _bits(ctr_max)
    frag.require(fire, 1)
    b.widths[fire] = SigDecl(fire, 1, False, True)

    mem_addr = f"mem_in{suffix}_addr"
    mem_data = f"mem_in{suffix}_data"
    mem_en = f"mem_in{suffix}_en"
    fetch_on = "ctrl_fetch"
    frag.require(fetch_on, 1)
    b.widths[fetch_on] = SigDecl(fetch_on, 1, False, True)
    b.widths[mem_data] = SigDecl(mem_data, geo.bus_width)

    # the counter must represent word_last + 1 so the stop compare holds
    addr_w = _bits(geo.word_last + 1)
    # issue side
    issued = b.register(b.name("issued"), ctr_w, "", kind="control")
    anchor = b.register(b.name("anchor"), ctr_w, "", kind="control")
    # placeholder d's patched below once expressions exist
    words_left = b.cmp("LT", b.name("word"), geo.word_last + 1)
    word = b.register(b.name("word"), addr_w, "", reset=geo.word_first,
                      kind="control")
    space_lhs = b.copy(b.add(issued, epw), ctr_w)
    space_rhs = b.copy(b.add(anchor, cap), ctr_w)
    space_ok = b.cmp("LE", space_lhs, space_rhs)
    issue = b.all_of([fetch_on, words_left, space_ok],
                     name=b.name("issue"))

    b.f.combs.append(Comb("COPY", b.decl(mem_addr, addr_w), (word,)))
    b.f.combs.append(Comb("COPY", b.decl(mem_en, 1, control=True), (issue,)))

    dv = b.register(b.name("dv"), 1, issue, kind="control", control=True)

    # patch counter inputs
    word_next = b.mux(issue, b.copy(b.add(word, 1), addr_w), word, addr_w)
    issued_next = b.mux(issue, b.copy(b.add(issued, epw), ctr_w), issued,
                        ctr_w)
    _patch_reg(frag, b.name("word"), word_next)
    _patch_reg(frag, b.name("issued"), issued_next)

    # arrival side: whole words are written, head/tail lanes never exported
    wptr_w = _bits(max(cap_words - 1, 1))
    wptr = b.register(b.name("wptr"), wptr_w, "", kind="control")
    wptr_next = b.mux(dv, b.mod_add(wptr, 1, cap_words, wptr_w), wptr, wptr_w)
    _patch_reg(frag, b.name("wptr"), wptr_next)
    arrived = b.register(b.name("arrived"), ctr_w, "", kind="control")
    arrived_next = b.mux(dv, b.copy(b.add(arrived, epw), ctr_w), arrived,
                         ctr_w)
    _patch_reg(frag, b.name("arrived"), arrived_next)

    for s in range(cap):
        word_hit = b.cmp("EQ", wptr, s // epw)
        en = b.land(dv, word_hit)
        lane = b.op("SLICE", (mem_data,), geo.data_width,
                    lo=(s % epw) * geo.data_width)
        b.register(b.name(f"slot{s}"), geo.data_width, lane, en=en,
                   kind="buffer_slot")

    # readiness: the whole window is in the ring
    need = b.copy(b.add(anchor, geo.span), ctr_w)
    ready = b.op("GE", (arrived, need), 1, name=b.name("ready"),
                 control=True)

    # anchor advance on fire (with the 2-D row-wrap variant)
    slot_w = _bits(cap - 1)
    anchor_slot = b.register(b.name("aslot"), slot_w, "",
                             reset=geo.anchor_init % cap, kind="control")
    if geo.wrap_every:
        wrap_w = _bits(max(geo.wrap_every - 1, 1))
        colc = b.register(b.name("col"), wrap_w, "", kind="control")
        at_wrap = b.cmp("EQ", colc, geo.wrap_every - 1)
        col_next = b.mux(fire,
                         b.mux(at_wrap, b.op("COPY", (0,), wrap_w),
                               b.copy(b.add(colc, 1), wrap_w), wrap_w),
                         colc, wrap_w)
        _patch_reg(frag, b.name("col"), col_next)
        adv_sel_w = _bits(max(geo.adv, geo.adv_wrap, 1))
        adv_val = b.mux(at_wrap, b.op("COPY", (geo.adv_wrap,), adv_sel_w),
                        b.op("COPY", (geo.adv,), adv_sel_w), adv_sel_w)
        anchor_next = b.mux(fire, b.copy(b.add(anchor, adv_val), ctr_w),
                            anchor, ctr_w)
        aslot_step = b.mux(at_wrap,
                           b.op("COPY", (geo.adv_wrap % cap,), slot_w + 1),
                           b.op("COPY", (geo.adv % cap,), slot_w + 1),
                           slot_w + 1)
        summed = b.add(anchor_slot, aslot_step)
        over = b.cmp("GE", summed, cap)
        wrapped = b.copy(b.sub(summed, cap), slot_w)
        stepped = b.mux(over, wrapped, b.copy(summed, slot_w), slot_w)
        aslot_next = b.mux(fire, stepped, anchor_slot, slot_w)
    else:
        anchor_next = b.mux(fire, b.copy(b.add(anchor, geo.adv), ctr_w),
                            anchor, ctr_w)
        aslot_next = b.mux(fire, b.mod_add(anchor_slot, geo.adv, cap, slot_w),
                           anchor_slot, slot_w)
    _patch_reg(frag, b.name("anchor"), anchor_next)
    _patch_reg(frag, b.name("aslot"), aslot_next)
    _patch_reg_init(frag, b.name("anchor"), geo.anchor_init)
    _patch_reg_init(frag, b.name("arrived"), 0)

    # window taps: tap k reads slot (anchor_slot + offset_k) mod cap
    tap_signals = []
    for k, off in enumerate(geo.tap_offsets):
        idx = b.mod_add(anchor_slot, off % cap, cap, slot_w)
        acc = b.name("slot0")
        for s in range(1, cap):
            hit = b.cmp("EQ", idx, s)
            acc = b.mux(hit, b.name(f"slot{s}"), acc, geo.data_width)
        # taps carry the element type; the ring itself is raw bits
        tap = b.op("COPY", (acc,), geo.data_width, name=b.name(f"tap{k}"),
                   signed=geo.data_signed)
        tap_signals.append(tap)

    wd_name = f"window_data{suffix}"
    b.op("CONCAT", tuple(reversed(tap_signals)),
         taps * geo.data_width, name=wd_name)
    b.op("COPY", (fire,), 1, name=f"window_valid{suffix}", control=True)
    b.op("COPY", (ready,), 1, name=f"sb_{arr}_ok", control=True)

    frag.mems.append(_input_memory(geo, suffix, mem_addr, mem_data, mem_en))
    return frag


def _input_memory(geo: BufferGeometry, suffix, addr, data, en):
    from .netlist import Memory
    depth = _ceil_div(geo.extent_total, geo.elems_per_word)
    # base_elem/total_elems bound the accessed range for trace accounting
    return Memory(f"mem_in{suffix}", "in", geo.bus_width, depth,
                  addr, data, en, geo.array, geo.data_width,
                  geo.elems_per_word, geo.elem_last + 1, geo.elem_first)


def _patch_reg(frag: Fragment, q_name: str, d_name: str):
    for r in frag.regs:
        if r.q.name == q_name:
            r.d = d_name
            return
    raise AssertionError(q_name)


def _patch_reg_init(frag: Fragment, q_name: str, reset: int):
    for r in frag.regs:
        if r.q.name == q_name:
            r.reset = reset
            return
    raise AssertionError(q_name)


# --- output drain -----------------------------------------------------------------


@dataclass(frozen=True)
class StorePlan:
    """Where one output array's stores land, per firing."""

    array: str
    elem_width: int
    depth: int               # declared extent (flat)
    base_init: int           # flat address of the first firing's stores
    adv: int                 # address advance per firing
    adv_wrap: int
    wrap_every: int
    offsets: tuple[int, ...]  # per-store constant offsets (store order)
    result_signals: tuple[str, ...]  # datapath result signal per store


def store_plan(stores: list[Store], decl: ArrayDecl, loop: LoopSpec,
               result_signals: list[str]) -> StorePlan:
    ndim = len(decl.extents)
    img_w = decl.extents[1] if ndim == 2 else 1
    lowers = {ix.var: ix.lower for ix in loop.indices}
    row_stride = (img_w, 1) if ndim == 2 else (1,)

    def flat_const(st: Store) -> int:
        return sum(d.const * rs for d, rs in zip(st.dims, row_stride))

    def flat_base(st: Store) -> int:
        total = 0
        for d, rs in zip(st.dims, row_stride):
            if d.var is not None:
                total += d.coeff * lowers[d.var] * rs
        return total

    bases = {flat_base(st) for st in stores}
    if len(bases) != 1:
        raise RestrictionError(
            f"stores to '{decl.name}' start at different base addresses")
    base0 = bases.pop()
    raw_offsets = [flat_const(st) for st in stores]
    min_off = min(raw_offsets)
    offsets = tuple(o - min_off for o in raw_offsets)
    base0 += min_off

    # per-fire advance from the flat coefficient of each loop index
    dims0 = stores[0].dims
    sigs = {tuple((d.var, d.coeff) for d in st.dims) for st in stores}
    if len(sigs) != 1:
        raise RestrictionError(
            f"stores to '{decl.name}' use different index coefficients")

    def flat_coeff(var: str) -> int:
        return sum(d.coeff * rs for d, rs in zip(dims0, row_stride)
                   if d.var == var)

    adv = adv_wrap = 0
    wrap_every = 0
    if len(loop.indices) == 1:
        ix = loop.indices[0]
        adv = flat_coeff(ix.var) * ix.step
    elif len(loop.indices) == 2:
        outer, inner = loop.indices
        adv = flat_coeff(inner.var) * inner.step
        adv_outer = flat_coeff(outer.var) * outer.step
        if adv == 0 and adv_outer == 0 and any(d.var for d in dims0):
            raise RestrictionError(
                f"stores to '{decl.name}' have an unsupported pattern")
        wrap_every = inner.count
        adv_wrap = adv_outer - (inner.count - 1) * adv
        if adv_wrap < 0 or adv < 0:
            raise RestrictionError(
                f"stores to '{decl.name}' walk addresses backwards;"
                " unsupported pattern")
    depth = 1
    for e in decl.extents:
        depth *= e
    ix_of = {ix.var: ix for ix in loop.indices}
    for st in stores:
        first = last = 0
        for d, rs in zip(st.dims, row_stride):
            if d.var is not None:
                ix = ix_of[d.var]
                first += (d.coeff * ix.lower + d.const) * rs
                last += (d.coeff * (ix.lower + (ix.count - 1) * ix.step)
                         + d.const) * rs
            else:
                first += d.const * rs
                last += d.const * rs
        if first < 0 or last >= depth:
            raise RestrictionError(
                f"stores to '{decl.name}' reach address {max(first, last)},"
                f" outside the declared extent {depth}")
    return StorePlan(decl.name, decl.element.width, depth,
                     base0, adv, adv_wrap, wrap_every, offsets,
                     tuple(result_signals))


def build_output_drain(plan: StorePlan, multi: bool, trip: int) -> Fragment:
    """Hold registers plus a one-element-per-cycle writer for one output
    array.  Provides `mem_out[_<arr>]_{addr,data,we}`, `drain_<arr>_busy`
    and `stores_<arr>_done`."""
    arr = plan.array
    suffix = f"_{arr}" if multi else ""
    frag = Fragment(f"drain_{arr}")
    b = _Builder(frag, f"dr_{arr}")
    r = len(plan.offsets)

    rv = "result_valid"
    frag.require(rv, 1)
    b.widths[rv] = SigDecl(rv, 1, False, True)
    for sig in plan.result_signals:
        frag.require(sig, plan.elem_width)
        b.widths[sig] = SigDecl(sig, plan.elem_width)

    addr_w = _bits(max(plan.depth - 1, 1))
    base = b.register(b.name("base"), addr_w, "", reset=plan.base_init,
                      kind="control")
    total = trip * r
    done_w = _bits(total)
    count = b.register(b.name("count"), done_w, "", kind="control")

    if r == 1:
        we = b.copy(rv, 1, control=True)
        data = plan.result_signals[0]
        addr = (b.copy(b.add(base, plan.offsets[0]), addr_w)
                if plan.offsets[0] else base)
        advance = we
        busy = b.op("COPY", (0,), 1, name=b.name("busy"), control=True)
    else:
        holds = []
        for k, sig in enumerate(plan.result_signals):
            holds.append(b.register(b.name(f"hold{k}"), plan.elem_width,
                                    sig, en=rv, kind="drain_hold"))
        k_w = _bits(r - 1)
        kc = b.register(b.name("k"), k_w, "", kind="control")
        pend_w = _bits(r)
        pend = b.register(b.name("pend"), pend_w, "", kind="control")
        busy = b.cmp("GT", pend, 0, name=b.name("busy"))
        we = b.copy(busy, 1, control=True)
        pend_dec = b.copy(b.sub(pend, 1), pend_w)
        pend_next = b.mux(rv, b.op("COPY", (r,), pend_w),
                          b.mux(busy, pend_dec, pend, pend_w), pend_w)
        _patch_reg(frag, b.name("pend"), pend_next)
        k_next = b.mux(rv, b.op("COPY", (0,), k_w),
                       b.mux(busy, b.copy(b.add(kc, 1), k_w), kc, k_w), k_w)
        _patch_reg(frag, b.name("k"), k_next)
        # offset and data muxed by the drain position
        off_w = _bits(max(plan.offsets))
        off = b.op("COPY", (plan.offsets[0],), off_w)
        data = holds[0]
        for k in range(1, r):
            hit = b.cmp("EQ", kc, k)
            off = b.mux(hit, b.op("COPY", (plan.offsets[k],), off_w), off,
                        off_w)
            data = b.mux(hit, holds[k], data, plan.elem_width)
        addr = b.copy(b.add(base, off), addr_w)
        advance = b.land(busy, b.cmp("EQ", kc, r - 1))

    if plan.wrap_every:
        wrap_w = _bits(max(plan.wrap_every - 1, 1))
        col = b.register(b.name("col"), wrap_w, "", kind="control")
        at_wrap = b.cmp("EQ", col, plan.wrap_every - 1)
        col_next = b.mux(advance,
                         b.mux(at_wrap, b.op("COPY", (0,), wrap_w),
                               b.copy(b.add(col, 1), wrap_w), wrap_w),
                         col, wrap_w)
        _patch_reg(frag, b.name("col"), col_next)
        step_w = max(_bits(max(abs(plan.adv), abs(plan.adv_wrap), 1)), 1)
        step = b.mux(at_wrap, b.op("COPY", (plan.adv_wrap,), step_w),
                     b.op("COPY", (plan.adv,), step_w), step_w)
        base_next = b.mux(advance, b.copy(b.add(base, step), addr_w), base,
                          addr_w)
    else:
        base_next = b.mux(advance, b.copy(b.add(base, plan.adv), addr_w),
                          base, addr_w)
    _patch_reg(frag, b.name("base"), base_next)

    count_next = b.mux(we, b.copy(b.add(count, 1), done_w), count, done_w)
    _patch_reg(frag, b.name("count"), count_next)
    b.op("GE", (count, total), 1, name=f"stores_{arr}_done", control=True)
    b.op("COPY", (busy,), 1, name=f"drain_{arr}_busy", control=True)

    b.f.combs.append(Comb("COPY", b.decl(f"mem_out{suffix}_addr", addr_w),
                          (addr,)))
    b.f.combs.append(Comb("COPY",
                          b.decl(f"mem_out{suffix}_data", plan.elem_width),
                          (data,)))
    b.f.combs.append(Comb("COPY",
                          b.decl(f"mem_out{suffix}_we", 1, control=True),
                          (we,)))
    from .netlist import Memory
    frag.mems.append(Memory(f"mem_out{suffix}", "out", plan.elem_width,
                            plan.depth, f"mem_out{suffix}_addr",
                            f"mem_out{suffix}_data", f"mem_out{suffix}_we",
                            plan.array, plan.elem_width, 1, plan.depth, 0))
    return frag


# --- controller -------------------------------------------------------------------


def build_controller(loop: LoopSpec, trip: int, in_arrays: list[str],
                     out_arrays: list[str], spacing: int) -> Fragment:
    """Run control: start/done handshake, firing decision, iteration FSMs.

    `spacing` is the minimum cycles between firings (max stores per firing
    across output arrays); 1 means back-to-back.
    """
    frag = Fragment("controller")
    b = _Builder(frag, "ctrl")

    frag.require("start", 1)
    b.widths["start"] = SigDecl("start", 1, False, True)
    ready_all = []
    for arr in in_arrays:
        sig = f"sb_{arr}_ok"
        frag.require(sig, 1)
        b.widths[sig] = SigDecl(sig, 1, False, True)
        ready_all.append(sig)
    done_all = []
    busy_any = []
    for arr in out_arrays:
        s1, s2 = f"stores_{arr}_done", f"drain_{arr}_busy"
        frag.require(s1, 1)
        frag.require(s2, 1)
        b.widths[s1] = SigDecl(s1, 1, False, True)
        b.widths[s2] = SigDecl(s2, 1, False, True)
        done_all.append(s1)
        busy_any.append(s2)

    fire_w = _bits(trip)
    fire_count = b.register("ctrl_fired", fire_w, "", kind="control")
    remaining = b.cmp("LT", fire_count, trip)

    conds = ready_all + [remaining, "ctrl_active"]
    if spacing > 1:
        gap_w = _bits(spacing - 1)
        gap = b.register("ctrl_gap", gap_w, "", kind="control")
        gap_zero = b.cmp("EQ", gap, 0)
        conds.append(gap_zero)
    loop_actives = []
    for ix in loop.indices:
        sig = f"loop_{ix.var}_active"
        loop_actives.append(sig)
        conds.append(sig)
        b.widths[sig] = SigDecl(sig, 1, False, True)
    fire = b.all_of(conds, name="fire")

    if spacing > 1:
        dec = b.mux(b.cmp("GT", gap, 0), b.copy(b.sub(gap, 1), gap_w), gap,
                    gap_w)
        gap_next = b.mux(fire, b.op("COPY", (spacing - 1,), gap_w), dec,
                         gap_w)
        _patch_reg(frag, "ctrl_gap", gap_next)

    fired_next = b.mux(fire, b.copy(b.add(fire_count, 1), fire_w),
                       fire_count, fire_w)
    _patch_reg(frag, "ctrl_fired", fired_next)
    last_fire = b.land(fire, b.cmp("EQ", fire_count, trip - 1),
                       name="ctrl_last_fire")
    all_done = done_all[0] if len(done_all) == 1 else None
    if all_done is None:
        acc = done_all[0]
        for s in done_all[1:]:
            acc = b.land(acc, s)
        all_done = b.copy(acc, 1, control=True)
    b.op("COPY", (all_done,), 1, name="ctrl_all_stored", control=True)

    frag.fsms.append(Fsm(
        "ctrl_main",
        ("IDLE", "FILL", "STEADY", "DRAIN", "DONE"),
        "IDLE",
        (
            ("IDLE", "start", "FILL"),
            ("FILL", "ctrl_last_fire", "DRAIN"),
            ("FILL", "fire", "STEADY"),
            ("STEADY", "ctrl_last_fire", "DRAIN"),
            ("DRAIN", "ctrl_all_stored", "DONE"),
        ),
        (
            (SigDecl("ctrl_active", 1, control=True), ("FILL", "STEADY")),
            (SigDecl("ctrl_fetch", 1, control=True),
             ("FILL", "STEADY", "DRAIN")),
            (SigDecl("done", 1, control=True), ("DONE",)),
        ),
    ))

    for ix in loop.indices:
        frag.fsms.append(Fsm(
            f"loop_{ix.var}", ("RUN", "LDONE"), "RUN",
            (("RUN", "ctrl_last_fire", "LDONE"),),
            ((SigDecl(f"loop_{ix.var}_active", 1, control=True), ("RUN",)),),
        ))
    return frag
