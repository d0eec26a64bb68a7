"""Front end for the logic-program source format.

Grammar summary:
  program  :=  clause*
  clause   :=  atom ( ':-' atoms )? '.'
  atoms    :=  atom (',' atom)*
  atom     :=  expr ( ('is'|'=:='|'=\\='|'<'|'>'|'=<'|'>=') expr )?
  expr     :=  arithmetic over + - * // mod, primaries:
               lowercase name (optionally with '(' args ')'), UppercaseVar,
               integer, $payload, '[' list ']', '(' expr ')'

'%' starts a comment to end of line. Lowercase identifiers are
constants/functors/predicates, uppercase (or '_') are variables, '$name'
is a subsymbolic placeholder. '[a,b|T]' is sugar for '.'(a,'.'(b,T)).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .logic import (
    Atom,
    Clause,
    Const,
    Goal,
    Payload,
    Program,
    Struct,
    SymbolTable,
    Term,
    Var,
)

LIST_FUNCTOR = "."
NIL_NAME = "[]"

COMPARISON_OPS = ("=:=", "=\\=", "=<", ">=", "<", ">")
ADD_OPS = ("+", "-")
MUL_OPS = ("*", "//", "mod")

# Predicates the engine reduces deterministically; not user-definable.
EVALUABLE_PREDS = {
    ("is", 2), ("=:=", 2), ("=\\=", 2), ("<", 2), (">", 2), ("=<", 2), (">=", 2),
    ("between", 3),
}


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"{message} at line {line}, column {col}")
        self.line = line
        self.col = col


class ArityError(ValueError):
    def __init__(self, name: str, seen: int, expected: int) -> None:
        super().__init__(
            f"arity conflict for '{name}': used with {seen} args, previously {expected}"
        )
        self.symbol = name


@dataclass(frozen=True)
class _Token:
    kind: str  # 'name' | 'var' | 'int' | 'payload' | 'punct' | 'eof'
    text: str
    line: int
    col: int


_PUNCT = [":-", "=:=", "=\\=", "=<", ">=", "//", "(", ")", "[", "]", "|", ",", ".",
          "+", "-", "*", "<", ">"]


def _tokenize(text: str) -> list[_Token]:
    toks: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "%":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "$":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            if j == i + 1:
                raise ParseError("empty payload name after '$'", line, col)
            toks.append(_Token("payload", text[i + 1:j], line, col))
            col += j - i
            i = j
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(_Token("int", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "var" if (word[0].isupper() or word[0] == "_") else "name"
            toks.append(_Token(kind, word, line, col))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                toks.append(_Token("punct", p, line, col))
                i += len(p)
                col += len(p)
                break
        else:
            raise ParseError(f"unexpected character {ch!r}", line, col)
    toks.append(_Token("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, text: str, symbols: SymbolTable,
                 pred_arity: dict[int, int], functor_arity: dict[int, int],
                 strict_arity: bool = True) -> None:
        self.toks = _tokenize(text)
        self.pos = 0
        self.symbols = symbols
        self.pred_arity = pred_arity
        self.functor_arity = functor_arity
        self.strict_arity = strict_arity
        self.varmap: dict[str, int] = {}
        self.var_next = 0

    def peek(self) -> _Token:
        return self.toks[self.pos]

    def advance(self) -> _Token:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text!r}", tok.line, tok.col)
        return self.advance()

    def error(self, message: str) -> ParseError:
        tok = self.peek()
        return ParseError(message, tok.line, tok.col)

    def at_punct(self, *texts: str) -> bool:
        tok = self.peek()
        return tok.kind == "punct" and tok.text in texts

    def fresh_var(self) -> Var:
        v = Var(self.var_next)
        self.var_next += 1
        return v

    def named_var(self, name: str) -> Var:
        if name == "_":
            return self.fresh_var()
        idx = self.varmap.get(name)
        if idx is None:
            idx = self.var_next
            self.var_next += 1
            self.varmap[name] = idx
        return Var(idx)

    def reset_clause_scope(self) -> None:
        self.varmap = {}
        self.var_next = 0

    def check_functor(self, name: str, arity: int) -> int:
        sym = self.symbols.intern(name)
        seen = self.functor_arity.get(sym)
        if seen is None:
            self.functor_arity[sym] = arity
        elif seen != arity and self.strict_arity:
            raise ArityError(name, arity, seen)
        return sym

    def check_pred(self, name: str, arity: int) -> int:
        sym = self.symbols.intern(name)
        seen = self.pred_arity.get(sym)
        if seen is None:
            if self.strict_arity:
                self.pred_arity[sym] = arity
        elif seen != arity and self.strict_arity:
            raise ArityError(name, arity, seen)
        return sym

    # --- terms ---

    def parse_expr(self) -> Term:
        term = self.parse_mul()
        while self.at_punct(*ADD_OPS):
            op = self.advance().text
            rhs = self.parse_mul()
            term = Struct(self.check_functor(op, 2), (term, rhs))
        return term

    def parse_mul(self) -> Term:
        term = self.parse_primary()
        while self.at_punct(*MUL_OPS) or (self.peek().kind == "name" and self.peek().text == "mod"):
            op = self.advance().text
            rhs = self.parse_primary()
            term = Struct(self.check_functor(op, 2), (term, rhs))
        return term

    def parse_primary(self) -> Term:
        tok = self.peek()
        if tok.kind == "int":
            self.advance()
            return Const(self.symbols.intern(tok.text))
        if tok.kind == "punct" and tok.text == "-":
            nxt = self.toks[self.pos + 1]
            if nxt.kind == "int":
                self.advance()
                self.advance()
                return Const(self.symbols.intern("-" + nxt.text))
            raise self.error("unary '-' is only supported on integer literals")
        if tok.kind == "var":
            self.advance()
            return self.named_var(tok.text)
        if tok.kind == "payload":
            self.advance()
            return Payload(tok.text)
        if tok.kind == "punct" and tok.text == "(":
            self.advance()
            inner = self.parse_expr()
            self.expect(")")
            return inner
        if tok.kind == "punct" and tok.text == "[":
            return self.parse_list()
        if tok.kind == "name":
            self.advance()
            if self.at_punct("("):
                self.advance()
                args = [self.parse_expr()]
                while self.at_punct(","):
                    self.advance()
                    args.append(self.parse_expr())
                self.expect(")")
                sym = self.check_functor(tok.text, len(args))
                return Struct(sym, tuple(args))
            return Const(self.symbols.intern(tok.text))
        raise self.error(f"expected a term, found {tok.text!r}")

    def parse_list(self) -> Term:
        self.expect("[")
        if self.at_punct("]"):
            self.advance()
            return Const(self.symbols.intern(NIL_NAME))
        items = [self.parse_expr()]
        while self.at_punct(","):
            self.advance()
            items.append(self.parse_expr())
        if self.at_punct("|"):
            self.advance()
            tail: Term = self.parse_expr()
        else:
            tail = Const(self.symbols.intern(NIL_NAME))
        self.expect("]")
        cons = self.symbols.intern(LIST_FUNCTOR)
        self.functor_arity.setdefault(cons, 2)
        for item in reversed(items):
            tail = Struct(cons, (item, tail))
        return tail

    # --- atoms ---

    def parse_atom(self, head: bool = False) -> Atom:
        tok = self.peek()
        if tok.kind == "name" and tok.text == "is":
            raise self.error("'is' cannot start an atom")
        term = self.parse_expr()
        if self.at_punct(*COMPARISON_OPS) or (self.peek().kind == "name" and self.peek().text == "is"):
            op = self.advance().text
            rhs = self.parse_expr()
            if head:
                raise self.error(f"evaluable '{op}' cannot be a clause head")
            sym = self.symbols.intern(op)
            return Atom(sym, (term, rhs))
        return self.term_to_atom(term, head)

    def term_to_atom(self, term: Term, head: bool) -> Atom:
        if isinstance(term, Struct):
            name = self.symbols.name(term.functor)
            args = term.args
        elif isinstance(term, Const):
            name = self.symbols.name(term.sym)
            args = ()
        else:
            raise self.error("expected an atom")
        if head and (name, len(args)) in EVALUABLE_PREDS:
            raise self.error(f"cannot redefine evaluable predicate '{name}'")
        sym = self.check_pred(name, len(args))
        return Atom(sym, args)

    def parse_clause(self, clause_id: int) -> Clause:
        self.reset_clause_scope()
        head = self.parse_atom(head=True)
        body: list[Atom] = []
        if self.at_punct(":-"):
            self.advance()
            body.append(self.parse_atom())
            while self.at_punct(","):
                self.advance()
                body.append(self.parse_atom())
        self.expect(".")
        return Clause(clause_id, head, tuple(body))

    def parse_program_clauses(self) -> list[Clause]:
        clauses: list[Clause] = []
        while self.peek().kind != "eof":
            clauses.append(self.parse_clause(len(clauses)))
        return clauses

    def parse_goal_atoms(self) -> list[Atom]:
        if self.peek().kind == "eof":
            return []
        atoms = [self.parse_atom()]
        while self.at_punct(","):
            self.advance()
            atoms.append(self.parse_atom())
        if self.peek().kind != "eof":
            raise self.error("trailing input after goal")
        return atoms


def parse_program(text: str, symbols: Optional[SymbolTable] = None,
                  occurs_check: bool = False) -> Program:
    """Parse program source into a Program with dense clause ids in source order."""
    symbols = symbols if symbols is not None else SymbolTable()
    pred_arity: dict[int, int] = {}
    functor_arity: dict[int, int] = {}
    parser = _Parser(text, symbols, pred_arity, functor_arity)
    clauses = parser.parse_program_clauses()
    return Program(clauses, symbols, pred_arity, functor_arity, occurs_check=occurs_check)


def parse_query(text: str, program: Program) -> Goal:
    """Parse a comma-separated atom list against a program's symbol table.

    Predicates unknown to the program are allowed; arity conflicts with known
    predicates are not errors here (such goals simply fail to resolve).
    """
    parser = _Parser(text, program.symbols, dict(program.pred_arity),
                     dict(program.functor_arity), strict_arity=False)
    atoms = parser.parse_goal_atoms()
    return Goal.make(atoms)


# --- printing ---

def _is_list(term: Term, symbols: SymbolTable) -> bool:
    return isinstance(term, Struct) and symbols.name(term.functor) == LIST_FUNCTOR and len(term.args) == 2


def _var_name(idx: int) -> str:
    if idx < 26:
        return chr(ord("A") + idx)
    return f"V{idx}"


def term_to_text(term: Term, symbols: SymbolTable, parent_prec: int = 0) -> str:
    if isinstance(term, Const):
        return symbols.name(term.sym)
    if isinstance(term, Var):
        return _var_name(term.idx)
    if isinstance(term, Payload):
        return f"${term.ref}"
    assert isinstance(term, Struct)
    name = symbols.name(term.functor)
    if _is_list(term, symbols):
        items = []
        cur: Term = term
        while _is_list(cur, symbols):
            items.append(term_to_text(cur.args[0], symbols))
            cur = cur.args[1]
        if isinstance(cur, Const) and symbols.name(cur.sym) == NIL_NAME:
            return "[" + ", ".join(items) + "]"
        return "[" + ", ".join(items) + " | " + term_to_text(cur, symbols) + "]"
    if name in ADD_OPS and len(term.args) == 2:
        inner = f"{term_to_text(term.args[0], symbols, 1)} {name} {term_to_text(term.args[1], symbols, 2)}"
        return f"({inner})" if parent_prec >= 2 else inner
    if name in MUL_OPS and len(term.args) == 2:
        inner = f"{term_to_text(term.args[0], symbols, 2)} {name} {term_to_text(term.args[1], symbols, 3)}"
        return f"({inner})" if parent_prec >= 3 else inner
    args = ", ".join(term_to_text(a, symbols) for a in term.args)
    return f"{name}({args})"


def atom_to_text(atom: Atom, symbols: SymbolTable) -> str:
    name = symbols.name(atom.pred)
    if len(atom.args) == 2 and (name in COMPARISON_OPS or name == "is"):
        return f"{term_to_text(atom.args[0], symbols, 1)} {name} {term_to_text(atom.args[1], symbols, 1)}"
    if not atom.args:
        return name
    return f"{name}({', '.join(term_to_text(a, symbols) for a in atom.args)})"


def clause_to_text(clause: Clause, symbols: SymbolTable) -> str:
    head = atom_to_text(clause.head, symbols)
    if not clause.body:
        return head + "."
    return head + " :- " + ", ".join(atom_to_text(a, symbols) for a in clause.body) + "."


def program_to_text(program: Program) -> str:
    return "\n".join(clause_to_text(c, program.symbols) for c in program.clauses) + "\n"


def goal_to_text(goal: Goal, symbols: SymbolTable) -> str:
    if goal.is_false:
        return "<false>"
    if goal.is_true:
        return "<true>"
    return ", ".join(atom_to_text(a, symbols) for a in goal.atoms)
