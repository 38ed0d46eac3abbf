"""Incremental pushdown recognizer for the reasoning-tree document grammar.

The tracker consumes the generated token stream one token at a time,
processing each token's bytes through an explicit frame stack.  It emits
lifecycle events (task open/close, thought closed, tool parameters ready,
tool-result slot opened, subtask list open/close, done) at exact token
offsets, and computes the set of tokens admissible as the next emission.

Admissibility is exact: a token is admitted iff feeding its bytes keeps the
document a prefix of some schema-valid completion within the depth limit.
String contents are constrained to be valid UTF-8 with legal JSON escapes
so that any fully admitted document survives ``json.loads``.  Tool names
are constrained to the registered tool set via a byte trie; parameters are
constrained to be a JSON object but otherwise free (semantic validation
happens at dispatch, not during decoding).

Masks depend only on a small signature of the machine state (top frames
plus the scalar submachines), so they are memoized per grammar; long
string or replay runs hit the memo almost every step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .tokenizer import ByteTokenizer, build_tokenizer
from .schema import DEFAULT_DEPTH_LIMIT, ToolSpec

# Event kinds (shared spelling with schema markers).
TASK_OPENED = "TaskOpened"
THOUGHT_CLOSED = "ThoughtClosed"
TOOL_PARAMS_READY = "ToolParamsReady"
TOOL_RESULT_SLOT_OPENED = "ToolResultSlotOpened"
SUBTASK_LIST_OPENED = "SubtaskListOpened"
SUBTASK_LIST_CLOSED = "SubtaskListClosed"
TASK_CLOSED = "TaskClosed"
DONE = "Done"


@dataclass
class StructureEvent:
    kind: str
    offset: int
    depth: int
    payload: dict | None = None

    def to_json(self) -> str:
        d = {"kind": self.kind, "offset": self.offset, "depth": self.depth}
        if self.payload is not None:
            d["payload"] = self.payload
        return json.dumps(d, separators=(",", ":"), ensure_ascii=False)


class Rejected(ValueError):
    """Token not admitted by the grammar; decoder/mask desynchronization."""

    def __init__(self, token_id: int, piece: bytes, byte_index: int, context: str):
        self.token_id = token_id
        self.piece = piece
        self.byte_index = byte_index
        super().__init__(
            f"token {token_id} ({piece!r}) rejected at piece byte {byte_index}: {context}"
        )


# Frame kinds
FK_ROOT, FK_TASK, FK_LIST, FK_OBJ, FK_ARR = range(5)

# Root phases
R_OPEN, R_TASK, R_AFTER = range(3)
# Task phases (9 marks a completed key whose string value's quote is pending;
# while that string runs, the frame parks and the string machine owns bytes)
T_KEY, T_COMMA, T_PARAMS_OPEN, T_RESULT_VALUE, T_SUBTASKS_OPEN, T_END = range(6)
T_PENDING_STRING = 9
# Key-position codes
K_FIRST, K_POST_THOUGHT, K_PARAMS, K_RESULT, K_POST_RESULT, K_CONCL = range(6)
# List phases
L_TASK, L_AFTER = range(2)
# Object phases
O_KEY_OR_CLOSE, O_KEY_START, O_COLON, O_VALUE, O_AFTER = range(5)
# Array phases
A_VALUE_OR_CLOSE, A_VALUE, A_AFTER = range(3)

# String owner codes
S_NONE, S_THOUGHT, S_TOOLNAME, S_CONCLUSION, S_RESULT, S_OBJ_KEY, S_OBJ_VAL, S_ARR_VAL = range(8)
# Scalar value owners (numbers / literals)
V_NONE, V_RESULT, V_OBJ, V_ARR = range(4)
# Number states
NS_MINUS, NS_ZERO, NS_INT, NS_DOT, NS_FRAC, NS_E, NS_ESIGN, NS_EXP = range(8)
_NUM_TERMINAL = {NS_ZERO, NS_INT, NS_FRAC, NS_EXP}

_KEY_THOUGHT = b'"thought":'
_KEY_TOOL_NAME = b'"tool_name":'
_KEY_PARAMETERS = b'"parameters":'
_KEY_TOOL_RESULT = b'"tool_result":'
_KEY_SUBTASKS = b'"subtasks":'
_KEY_CONCLUSION = b'"conclusion":'

_ESCAPABLE = frozenset(b'"\\/bfnrt')
_HEX = frozenset(b"0123456789abcdefABCDEF")
_DIGITS = frozenset(b"0123456789")
_DIGITS19 = frozenset(b"123456789")


class _Frame:
    __slots__ = (
        "kind", "phase", "depth", "next_keys", "key_buf",
        "tool_name", "params_text", "sub_comma_tok", "last_comma_tok", "owner",
    )

    def __init__(self, kind: int, phase: int, depth: int = 0, owner: int = V_NONE):
        self.kind = kind
        self.phase = phase
        self.depth = depth
        self.owner = owner
        self.next_keys = K_FIRST
        self.key_buf = b""
        self.tool_name = ""
        self.params_text = ""
        self.sub_comma_tok = -1
        self.last_comma_tok = -1

    def copy(self) -> "_Frame":
        f = _Frame(self.kind, self.phase, self.depth, self.owner)
        f.next_keys = self.next_keys
        f.key_buf = self.key_buf
        f.tool_name = self.tool_name
        f.params_text = self.params_text
        f.sub_comma_tok = self.sub_comma_tok
        f.last_comma_tok = self.last_comma_tok
        return f

    def sig(self):
        return (self.kind, self.phase, self.next_keys, self.key_buf, self.owner)


class TokenMask:
    """Set of admissible next-token ids; a predicate plus array views."""

    __slots__ = ("ids", "_set", "_arrays")

    def __init__(self, ids):
        self.ids = tuple(sorted(ids))
        self._set = frozenset(self.ids)
        self._arrays: dict[int, np.ndarray] = {}

    def admits(self, token_id: int) -> bool:
        return token_id in self._set

    def __contains__(self, token_id: int) -> bool:
        return token_id in self._set

    def __len__(self) -> int:
        return len(self.ids)

    def as_array(self, vocab_size: int) -> np.ndarray:
        arr = self._arrays.get(vocab_size)
        if arr is None:
            arr = np.zeros(vocab_size, dtype=bool)
            ids = [i for i in self.ids if i < vocab_size]
            arr[ids] = True
            self._arrays[vocab_size] = arr
        return arr


def _build_trie(names: list[str]) -> list[tuple[dict, bool]]:
    """Byte trie over tool names: list of (children byte->node, terminal)."""
    nodes: list[tuple[dict, bool]] = [({}, False)]
    for name in names:
        cur = 0
        for b in name.encode("utf-8"):
            children, term = nodes[cur]
            nxt = children.get(b)
            if nxt is None:
                nodes.append(({}, False))
                nxt = len(nodes) - 1
                children[b] = nxt
            cur = nxt
        children, _ = nodes[cur]
        nodes[cur] = (children, True)
    return nodes


class ThreadGrammar:
    """Compiled document grammar: fixed schema plus per-request tool specs."""

    def __init__(
        self,
        tools: list[ToolSpec] | tuple[ToolSpec, ...] = (),
        depth_limit: int = DEFAULT_DEPTH_LIMIT,
        tokenizer: ByteTokenizer | None = None,
    ):
        if depth_limit < 1:
            raise ValueError("depth_limit must be >= 1")
        names = [t.name for t in tools]
        if len(set(names)) != len(names):
            raise ValueError("tool names must be unique")
        self.tokenizer = tokenizer or build_tokenizer()
        self.depth_limit = depth_limit
        self.tool_names = tuple(names)
        self.trie = _build_trie(names) if names else None
        self.json_depth_limit = max(2, 2 * depth_limit)
        self._mask_memo: dict[tuple, TokenMask] = {}

    def tracker(self) -> "Tracker":
        return Tracker(self)


def init(grammar: ThreadGrammar) -> "Tracker":
    """Fresh tracker expecting the document's first structural token."""
    return grammar.tracker()


class Tracker:
    """Mutable parse state over one request's emission stream."""

    __slots__ = (
        "grammar", "frames", "consumed", "done",
        "str_active", "str_esc", "str_hex", "u8_need", "u8_lo", "u8_hi",
        "str_len", "trie_node", "name_buf",
        "num_owner", "num_state", "lit_owner", "lit_rest",
        "json_depth", "capture", "probe", "_events", "_tok",
    )

    def __init__(self, grammar: ThreadGrammar):
        self.grammar = grammar
        self.frames: list[_Frame] = [_Frame(FK_ROOT, R_OPEN)]
        self.consumed = 0
        self.done = False
        self.str_active = S_NONE
        self.str_esc = 0
        self.str_hex = 0
        self.u8_need = 0
        self.u8_lo = 0
        self.u8_hi = 0
        self.str_len = 0
        self.trie_node = 0
        self.name_buf = b""
        self.num_owner = V_NONE
        self.num_state = NS_ZERO
        self.lit_owner = V_NONE
        self.lit_rest = b""
        self.json_depth = 0
        self.capture: bytearray | None = None
        self.probe = False
        self._events: list[StructureEvent] = []
        self._tok = 0

    # -- state copy ---------------------------------------------------------

    def clone(self, probe: bool = False) -> "Tracker":
        """Copy the state; a single token mutates at most the top 3 frames."""
        t = Tracker.__new__(Tracker)
        t.grammar = self.grammar
        keep = len(self.frames) - 3
        if keep <= 0:
            t.frames = [f.copy() for f in self.frames]
        else:
            t.frames = self.frames[:keep] + [f.copy() for f in self.frames[keep:]]
        t.consumed = self.consumed
        t.done = self.done
        t.str_active = self.str_active
        t.str_esc = self.str_esc
        t.str_hex = self.str_hex
        t.u8_need = self.u8_need
        t.u8_lo = self.u8_lo
        t.u8_hi = self.u8_hi
        t.str_len = self.str_len
        t.trie_node = self.trie_node
        t.name_buf = self.name_buf
        t.num_owner = self.num_owner
        t.num_state = self.num_state
        t.lit_owner = self.lit_owner
        t.lit_rest = self.lit_rest
        t.json_depth = self.json_depth
        t.capture = None if probe else (bytearray(self.capture) if self.capture is not None else None)
        t.probe = probe
        t._events = []
        t._tok = self._tok
        return t

    # NOTE: clones share untouched deep frames with the parent.  That is safe
    # for probing (probe clones are discarded) but a durable copy for executor
    # transfer should copy everything.
    def deep_copy(self) -> "Tracker":
        t = self.clone()
        t.frames = [f.copy() for f in self.frames]
        return t

    # -- events -------------------------------------------------------------

    def _emit(self, kind: str, depth: int, payload: dict | None = None):
        if not self.probe:
            self._events.append(StructureEvent(kind, self._tok, depth, payload))

    # -- public api ---------------------------------------------------------

    def feed(self, token_id: int) -> list[StructureEvent]:
        """Consume one token; return the lifecycle events it completed."""
        piece = self.grammar.tokenizer.piece(token_id)
        self._tok = self.consumed
        self._events = []
        for i, b in enumerate(piece):
            if not self._consume_byte(b):
                raise Rejected(token_id, piece, i, self._context())
        self.consumed += 1
        return self._events

    def current_depth(self) -> int:
        """Task-nesting depth of the position after the last consumed token."""
        for f in reversed(self.frames):
            if f.kind == FK_TASK:
                return f.depth
        return 0

    def allowed_mask(self) -> TokenMask:
        """Admissible next tokens; memoized on the machine-state signature."""
        sig = self._mask_sig()
        memo = self.grammar._mask_memo
        mask = memo.get(sig)
        if mask is None:
            admitted = []
            pieces = self.grammar.tokenizer.pieces
            for tid in range(len(pieces)):
                sim = self.clone(probe=True)
                ok = True
                for b in pieces[tid]:
                    if not sim._consume_byte(b):
                        ok = False
                        break
                if ok:
                    admitted.append(tid)
            mask = TokenMask(admitted)
            memo[sig] = mask
        return mask

    def _mask_sig(self) -> tuple:
        top = tuple(f.sig() for f in self.frames[-3:])
        depth_ok = False
        tools_ok = self.grammar.trie is not None
        for f in reversed(self.frames):
            if f.kind == FK_TASK:
                depth_ok = f.depth + 1 <= self.grammar.depth_limit
                break
        return (
            top, len(self.frames) >= 3, depth_ok, tools_ok, self.done,
            self.str_active, self.str_esc, self.str_hex,
            self.u8_need, self.u8_lo, self.u8_hi, min(self.str_len, 1),
            self.trie_node, self.num_owner, self.num_state,
            self.lit_owner, self.lit_rest,
            min(self.grammar.json_depth_limit - self.json_depth, 2),
        )

    def _context(self) -> str:
        if not self.frames:
            return "document already complete"
        f = self.frames[-1]
        kinds = {FK_ROOT: "root", FK_TASK: "task", FK_LIST: "list", FK_OBJ: "object", FK_ARR: "array"}
        parts = [f"in {kinds[f.kind]} phase {f.phase}"]
        if self.str_active:
            parts.append("inside string")
        if self.num_owner:
            parts.append("inside number")
        return ", ".join(parts)

    # -- byte machine -------------------------------------------------------

    def _consume_byte(self, b: int) -> bool:
        if self.capture is not None:
            self.capture.append(b)
        while True:
            if not self.frames:
                return False
            if self.str_active:
                return self._string_byte(b)
            if self.lit_owner:
                return self._literal_byte(b)
            if self.num_owner:
                done = self._number_byte(b)
                if done is None:
                    return False
                if done:
                    return True
                # Number terminated by this delimiter; reprocess it below.
                continue
            return self._structural_byte(b)

    # Strings ---------------------------------------------------------------

    def _string_byte(self, b: int) -> bool:
        if self.str_hex:
            if b in _HEX:
                self.str_hex -= 1
                if self.str_hex == 0:
                    self.str_esc = 0
                    self.str_len += 1
                return True
            return False
        if self.str_esc:
            if self.str_active == S_TOOLNAME:
                return False
            if b == 0x75:  # u
                self.str_hex = 4
                return True
            if b in _ESCAPABLE:
                self.str_esc = 0
                self.str_len += 1
                return True
            return False
        if self.u8_need:
            if self.u8_lo <= b <= self.u8_hi:
                self.u8_need -= 1
                self.u8_lo, self.u8_hi = 0x80, 0xBF
                if self.u8_need == 0:
                    self.str_len += 1
                return True
            return False
        if b == 0x22:  # closing quote
            if self.str_active == S_CONCLUSION and self.str_len == 0:
                return False  # conclusions must be non-empty
            if self.str_active == S_TOOLNAME and not self.grammar.trie[self.trie_node][1]:
                return False
            return self._close_string()
        if self.str_active == S_TOOLNAME:
            nxt = self.grammar.trie[self.trie_node][0].get(b)
            if nxt is None:
                return False
            self.trie_node = nxt
            if not self.probe:
                self.name_buf += bytes([b])
            self.str_len += 1
            return True
        if b == 0x5C:  # backslash
            self.str_esc = 1
            return True
        if 0x20 <= b <= 0x7F:
            self.str_len += 1
            return True
        # UTF-8 lead bytes
        if 0xC2 <= b <= 0xDF:
            self.u8_need, self.u8_lo, self.u8_hi = 1, 0x80, 0xBF
        elif b == 0xE0:
            self.u8_need, self.u8_lo, self.u8_hi = 2, 0xA0, 0xBF
        elif 0xE1 <= b <= 0xEC or b in (0xEE, 0xEF):
            self.u8_need, self.u8_lo, self.u8_hi = 2, 0x80, 0xBF
        elif b == 0xED:
            self.u8_need, self.u8_lo, self.u8_hi = 2, 0x80, 0x9F
        elif b == 0xF0:
            self.u8_need, self.u8_lo, self.u8_hi = 3, 0x90, 0xBF
        elif 0xF1 <= b <= 0xF3:
            self.u8_need, self.u8_lo, self.u8_hi = 3, 0x80, 0xBF
        elif b == 0xF4:
            self.u8_need, self.u8_lo, self.u8_hi = 3, 0x80, 0x8F
        else:
            return False
        return True

    def _close_string(self) -> bool:
        kind = self.str_active
        self.str_active = S_NONE
        self.str_len = 0
        top = self.frames[-1]
        if kind == S_THOUGHT:
            self._emit(THOUGHT_CLOSED, top.depth)
            top.phase = T_COMMA
            top.next_keys = K_POST_THOUGHT
        elif kind == S_TOOLNAME:
            if not self.probe:
                top.tool_name = self.name_buf.decode("utf-8")
            self.name_buf = b""
            self.trie_node = 0
            top.phase = T_COMMA
            top.next_keys = K_PARAMS
        elif kind == S_CONCLUSION:
            top.phase = T_END
        elif kind == S_RESULT:
            top.phase = T_COMMA
            top.next_keys = K_POST_RESULT
        elif kind == S_OBJ_KEY:
            top.phase = O_COLON
        elif kind == S_OBJ_VAL:
            top.phase = O_AFTER
        elif kind == S_ARR_VAL:
            top.phase = A_AFTER
        return True

    # Literals ----------------------------------------------------------------

    def _literal_byte(self, b: int) -> bool:
        if not self.lit_rest or b != self.lit_rest[0]:
            return False
        self.lit_rest = self.lit_rest[1:]
        if not self.lit_rest:
            owner = self.lit_owner
            self.lit_owner = V_NONE
            self._value_finished(owner)
        return True

    # Numbers -----------------------------------------------------------------

    def _number_byte(self, b: int):
        """True: consumed. False: terminated, reprocess byte. None: invalid."""
        s = self.num_state
        if s == NS_MINUS:
            if b == 0x30:
                self.num_state = NS_ZERO
                return True
            if b in _DIGITS19:
                self.num_state = NS_INT
                return True
            return None
        if s in (NS_ZERO, NS_INT):
            if s == NS_INT and b in _DIGITS:
                return True
            if s == NS_ZERO and b in _DIGITS:
                return None  # no leading zeros
            if b == 0x2E:
                self.num_state = NS_DOT
                return True
            if b in (0x65, 0x45):
                self.num_state = NS_E
                return True
        elif s == NS_DOT:
            if b in _DIGITS:
                self.num_state = NS_FRAC
                return True
            return None
        elif s == NS_FRAC:
            if b in _DIGITS:
                return True
            if b in (0x65, 0x45):
                self.num_state = NS_E
                return True
        elif s == NS_E:
            if b in (0x2B, 0x2D):
                self.num_state = NS_ESIGN
                return True
            if b in _DIGITS:
                self.num_state = NS_EXP
                return True
            return None
        elif s == NS_ESIGN:
            if b in _DIGITS:
                self.num_state = NS_EXP
                return True
            return None
        elif s == NS_EXP:
            if b in _DIGITS:
                return True
        if self.num_state in _NUM_TERMINAL:
            owner = self.num_owner
            self.num_owner = V_NONE
            self._value_finished(owner)
            return False
        return None

    def _value_finished(self, owner: int):
        top = self.frames[-1]
        if owner == V_RESULT:
            top.phase = T_COMMA
            top.next_keys = K_POST_RESULT
        elif owner == V_OBJ:
            top.phase = O_AFTER
        elif owner == V_ARR:
            top.phase = A_AFTER

    # Generic JSON value start -------------------------------------------------

    def _start_value(self, b: int, owner: int, str_code: int) -> bool:
        if b == 0x22:
            self.str_active = str_code
            self.str_len = 0
            return True
        if b == 0x7B:  # {
            if self.json_depth >= self.grammar.json_depth_limit:
                return False
            self.json_depth += 1
            self.frames.append(_Frame(FK_OBJ, O_KEY_OR_CLOSE, owner=owner))
            return True
        if b == 0x5B:  # [
            if self.json_depth >= self.grammar.json_depth_limit:
                return False
            self.json_depth += 1
            self.frames.append(_Frame(FK_ARR, A_VALUE_OR_CLOSE, owner=owner))
            return True
        if b == 0x2D:
            self.num_owner = owner
            self.num_state = NS_MINUS
            return True
        if b == 0x30:
            self.num_owner = owner
            self.num_state = NS_ZERO
            return True
        if b in _DIGITS19:
            self.num_owner = owner
            self.num_state = NS_INT
            return True
        if b == 0x74:  # t
            self.lit_owner = owner
            self.lit_rest = b"rue"
            return True
        if b == 0x66:  # f
            self.lit_owner = owner
            self.lit_rest = b"alse"
            return True
        if b == 0x6E:  # n
            self.lit_owner = owner
            self.lit_rest = b"ull"
            return True
        return False

    def _pop_container(self):
        """Close the top OBJ/ARR frame and notify its owner."""
        frame = self.frames.pop()
        self.json_depth -= 1
        owner = frame.owner
        top = self.frames[-1]
        if owner == V_NONE:  # parameters object of a task
            if not self.probe:
                top.params_text = self.capture.decode("utf-8") if self.capture is not None else ""
                self.capture = None
                self._emit(
                    TOOL_PARAMS_READY,
                    top.depth,
                    {"tool_name": top.tool_name, "parameters_text": top.params_text},
                )
            top.phase = T_COMMA
            top.next_keys = K_RESULT
        elif owner == V_RESULT:
            top.phase = T_COMMA
            top.next_keys = K_POST_RESULT
        elif owner == V_OBJ:
            top.phase = O_AFTER
        elif owner == V_ARR:
            top.phase = A_AFTER

    # Structural bytes ----------------------------------------------------------

    def _allowed_keys(self, f: _Frame) -> list[bytes]:
        code = f.next_keys
        if code == K_FIRST:
            return [_KEY_THOUGHT]
        if code == K_PARAMS:
            return [_KEY_PARAMETERS]
        if code == K_RESULT:
            return [_KEY_TOOL_RESULT]
        if code == K_CONCL:
            return [_KEY_CONCLUSION]
        keys = []
        if code == K_POST_THOUGHT and self.grammar.trie is not None:
            keys.append(_KEY_TOOL_NAME)
        if f.depth + 1 <= self.grammar.depth_limit:
            keys.append(_KEY_SUBTASKS)
        keys.append(_KEY_CONCLUSION)
        return keys

    def _key_complete(self, f: _Frame, key: bytes):
        f.key_buf = b""
        if key == _KEY_THOUGHT:
            f.phase = T_PENDING_STRING
            f.next_keys = S_THOUGHT
        elif key == _KEY_TOOL_NAME:
            f.phase = T_PENDING_STRING
            f.next_keys = S_TOOLNAME
        elif key == _KEY_PARAMETERS:
            f.phase = T_PARAMS_OPEN
        elif key == _KEY_TOOL_RESULT:
            self._emit(
                TOOL_RESULT_SLOT_OPENED,
                f.depth,
                {"tool_name": f.tool_name, "parameters_text": f.params_text} if not self.probe else None,
            )
            f.phase = T_RESULT_VALUE
        elif key == _KEY_SUBTASKS:
            f.sub_comma_tok = f.last_comma_tok
            f.phase = T_SUBTASKS_OPEN
        elif key == _KEY_CONCLUSION:
            f.phase = T_PENDING_STRING
            f.next_keys = S_CONCLUSION

    def _structural_byte(self, b: int) -> bool:
        f = self.frames[-1]
        kind = f.kind

        if kind == FK_ROOT:
            if f.phase == R_OPEN:
                if b == 0x5B:
                    f.phase = R_TASK
                    return True
                return False
            if f.phase == R_TASK:
                if b == 0x7B:
                    f.phase = R_AFTER
                    self.frames.append(_Frame(FK_TASK, T_KEY, depth=0))
                    self.frames[-1].next_keys = K_FIRST
                    self._emit(TASK_OPENED, 0)
                    return True
                return False
            # R_AFTER
            if b == 0x2C:
                f.phase = R_TASK
                return True
            if b == 0x5D:
                self._emit(DONE, 0)
                self.frames.pop()
                self.done = True
                return True
            return False

        if kind == FK_TASK:
            phase = f.phase
            if phase == T_PENDING_STRING:
                if b == 0x22:
                    self.str_active = f.next_keys  # holds the string code
                    self.str_len = 0
                    if self.str_active == S_TOOLNAME:
                        self.trie_node = 0
                        self.name_buf = b""
                    f.phase = T_KEY
                    f.next_keys = K_FIRST
                    return True
                return False
            if phase == T_KEY:
                buf = f.key_buf + bytes([b])
                cands = self._allowed_keys(f)
                live = [k for k in cands if k.startswith(buf)]
                if not live:
                    return False
                if buf in live:
                    self._key_complete(f, buf)
                else:
                    f.key_buf = buf
                return True
            if phase == T_COMMA:
                if b == 0x2C:
                    f.last_comma_tok = self._tok
                    f.phase = T_KEY
                    f.key_buf = b""
                    return True
                return False
            if phase == T_PARAMS_OPEN:
                if b == 0x7B:
                    if self.json_depth >= self.grammar.json_depth_limit:
                        return False
                    self.json_depth += 1
                    if not self.probe:
                        self.capture = bytearray(b"{")
                    self.frames.append(_Frame(FK_OBJ, O_KEY_OR_CLOSE, owner=V_NONE))
                    return True
                return False
            if phase == T_RESULT_VALUE:
                return self._start_value(b, V_RESULT, S_RESULT)
            if phase == T_SUBTASKS_OPEN:
                if b == 0x5B:
                    child_depth = f.depth + 1
                    self.frames.append(_Frame(FK_LIST, L_TASK, depth=child_depth))
                    self.frames[-1].sub_comma_tok = f.sub_comma_tok
                    self._emit(SUBTASK_LIST_OPENED, child_depth)
                    return True
                return False
            if phase == T_END:
                if b == 0x7D:
                    self._emit(TASK_CLOSED, f.depth)
                    self.frames.pop()
                    return True
                return False
            return False

        if kind == FK_LIST:
            if f.phase == L_TASK:
                if b == 0x7B:
                    f.phase = L_AFTER
                    self.frames.append(_Frame(FK_TASK, T_KEY, depth=f.depth))
                    self.frames[-1].next_keys = K_FIRST
                    self._emit(TASK_OPENED, f.depth)
                    return True
                return False
            # L_AFTER
            if b == 0x2C:
                f.phase = L_TASK
                return True
            if b == 0x5D:
                self._emit(
                    SUBTASK_LIST_CLOSED,
                    f.depth,
                    {"span_start": f.sub_comma_tok, "span_end": self._tok + 1} if not self.probe else None,
                )
                self.frames.pop()
                top = self.frames[-1]
                top.phase = T_COMMA
                top.next_keys = K_CONCL
                return True
            return False

        if kind == FK_OBJ:
            phase = f.phase
            if phase in (O_KEY_OR_CLOSE, O_KEY_START):
                if b == 0x22:
                    self.str_active = S_OBJ_KEY
                    self.str_len = 0
                    return True
                if b == 0x7D and phase == O_KEY_OR_CLOSE:
                    self._pop_container()
                    return True
                return False
            if phase == O_COLON:
                if b == 0x3A:
                    f.phase = O_VALUE
                    return True
                return False
            if phase == O_VALUE:
                return self._start_value(b, V_OBJ, S_OBJ_VAL)
            # O_AFTER
            if b == 0x2C:
                f.phase = O_KEY_START
                return True
            if b == 0x7D:
                self._pop_container()
                return True
            return False

        # FK_ARR
        if f.phase in (A_VALUE_OR_CLOSE, A_VALUE):
            if b == 0x5D and f.phase == A_VALUE_OR_CLOSE:
                self._pop_container()
                return True
            return self._start_value(b, V_ARR, S_ARR_VAL)
        # A_AFTER
        if b == 0x2C:
            f.phase = A_VALUE
            return True
        if b == 0x5D:
            self._pop_container()
            return True
        return False


def feed(tracker: Tracker, token_id: int) -> tuple[Tracker, list[StructureEvent]]:
    """Functional wrapper around Tracker.feed for one-shot callers."""
    events = tracker.feed(token_id)
    return tracker, events


def allowed_mask(tracker: Tracker) -> TokenMask:
    return tracker.allowed_mask()


def current_depth(tracker: Tracker) -> int:
    return tracker.current_depth()
