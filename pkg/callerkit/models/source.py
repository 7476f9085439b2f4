"""Provides models for the syntax facts extracted from one source file."""

from typing import Dict, List, Optional, Tuple

from pydantic import validator

from callerkit.models.base import Base
from callerkit.types import ImportKind, ParamKind


class Param(Base):
    """A single parameter of a function signature."""

    name: str
    annotation: Optional[str] = None
    default: Optional[str] = None
    kind: ParamKind = "positional"


class FunctionDecl(Base):
    """A function or method declaration.

    Attributes:
        qname: The fully qualified dotted name.
        name: The declared (unqualified) name.
        module_qname: The dotted name of the declaring module.
        module_path: The repository relative path of the declaring file.
        header_text: The signature through the closing colon, dedented.
        body_text: The statements after the header, dedented.
        source_text: The header and body, dedented.
        docstring: The raw leading string of the body, if any.
        span: The first (def) and last line of the declaration. Both are
            the def line when the body shares it.
        col_offset: The indentation of the def line.
        decorator_line: The first line of the decorator list, if any.
        params: The declared parameters in signature order.
        decorators: The dotted names of the decorators.
        is_method: Whether the function is defined directly in a class.
        is_async: Whether the function is a coroutine.
        enclosing_class: The qname of the class defining this method.
        enclosing_function: The qname of the nearest enclosing function.
        local_names: Names bound in the function's own scope.
        nested: Local names bound to nested function or class qnames.
        constructed: Locals bound exactly once to a call of a dotted name,
            mapped to that name.
        declared_global: Names declared global or nonlocal.
    """

    qname: str
    name: str
    module_qname: str
    module_path: str
    header_text: str
    body_text: str
    source_text: str
    docstring: Optional[str] = None
    span: Tuple[int, int]
    col_offset: int = 0
    decorator_line: Optional[int] = None
    params: List[Param] = []
    decorators: List[str] = []
    is_method: bool = False
    is_async: bool = False
    enclosing_class: Optional[str] = None
    enclosing_function: Optional[str] = None
    local_names: List[str] = []
    nested: Dict[str, str] = {}
    constructed: Dict[str, str] = {}
    declared_global: List[str] = []

    class Config:
        allow_mutation = False

    @validator("span")
    def _ordered(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if not 1 <= v[0] <= v[1]:
            raise ValueError("must be ordered line numbers")
        return v

    @property
    def receiver_name(self) -> Optional[str]:
        """The name of the implicit first parameter of a method."""
        if not self.is_method or not self.params:
            return None
        if "staticmethod" in self.decorators:
            return None
        first = self.params[0]
        if first.kind in ("positional_only", "positional"):
            return first.name
        return None


class ClassDecl(Base):
    """A class declaration.

    Attributes:
        qname: The fully qualified dotted name.
        name: The declared name.
        bases: The base class expressions as written.
        methods: The qnames of the methods defined directly in the class.
        span: The first and last line of the declaration.
        enclosing_function: The qname of the nearest enclosing function.
    """

    qname: str
    name: str
    bases: List[str] = []
    methods: List[str] = []
    span: Tuple[int, int]
    enclosing_function: Optional[str] = None

    class Config:
        allow_mutation = False


class ImportBinding(Base):
    """A name bound by an import statement.

    Attributes:
        local_alias: The name visible in the importing scope.
        target_qname: The dotted target, relative imports resolved.
        kind: `module` for `import x`, `symbol` for `from x import y`.
        scope: The qname of the binding function, empty at module level.
        line: The line of the import statement.
    """

    local_alias: str
    target_qname: str
    kind: ImportKind
    scope: str = ""
    line: int = 0

    class Config:
        allow_mutation = False


class StarImport(Base):
    """A `from x import *` statement."""

    module: str
    scope: str = ""
    line: int = 0


class GlobalVar(Base):
    """A top level assigned name."""

    name: str
    span: Tuple[int, int]


class CallSite(Base):
    """A call expression found inside a function body.

    Attributes:
        caller_qname: The qname of the function containing the call.
        callee_expr_text: The call expression as written.
        func_parts: The dotted chain of the called expression, empty when the
            callee is not a plain name or attribute chain. A leading
            `super()` is kept as a part.
        receiver_chain: The chain before the called attribute.
        resolved_callee: The resolved target, filled in by the call graph.
        location: The line and column of the call in the file.
        end_location: The end line and column of the call in the file.
        enclosing_statement_text: The simple statement holding the call, or
            the call itself when it sits in a compound statement header.
        in_compound_header: Whether the call sits in a compound header.
        arg_texts: The arguments as written, keywords as `name=value`.
        positional_count: The number of positional arguments.
        keywords: The keyword argument names, `**` for unpacked mappings.
    """

    caller_qname: str
    callee_expr_text: str
    func_parts: List[str] = []
    receiver_chain: str = ""
    resolved_callee: Optional[str] = None
    location: Tuple[int, int]
    end_location: Tuple[int, int]
    enclosing_statement_text: str
    in_compound_header: bool = False
    arg_texts: List[str] = []
    positional_count: int = 0
    keywords: List[str] = []

    @property
    def callee_name(self) -> Optional[str]:
        """The last part of the called chain."""
        return self.func_parts[-1] if self.func_parts else None


class FileFacts(Base):
    """The normalized syntax facts of one source file.

    Attributes:
        module_path: The repository relative file path.
        module_qname: The dotted module name.
        functions: Every function, including methods and nested functions.
        classes: Every class, including nested classes.
        imports: Every import binding, in any scope.
        star_imports: Every star import.
        globals: Top level assigned names.
        calls: Every call site inside a function, in source order.
        duplicates: Qnames defined more than once; the last one is kept.
        is_package: Whether the file is a package `__init__`.
    """

    module_path: str
    module_qname: str
    functions: List[FunctionDecl] = []
    classes: List[ClassDecl] = []
    imports: List[ImportBinding] = []
    star_imports: List[StarImport] = []
    globals: List[GlobalVar] = []
    calls: List[CallSite] = []
    duplicates: List[str] = []
    is_package: bool = False

    def function(self, qname: str) -> Optional[FunctionDecl]:
        for decl in self.functions:
            if decl.qname == qname:
                return decl
        return None

    def methods_of(self, cls: ClassDecl) -> List[FunctionDecl]:
        """Returns the method declarations of the given class."""
        wanted = set(cls.methods)
        return [f for f in self.functions if f.qname in wanted]
