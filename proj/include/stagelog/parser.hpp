#pragma once

#include <map>
#include <memory>
#include <string>

#include "stagelog/ast.hpp"
#include "stagelog/factset.hpp"

namespace stagelog {

/// Parses program text into a Program. The grammar is documented in
/// docs/grammar.ebnf. Throws EngineError with a SourceSpan on syntax errors
/// and on safety violations (a rule variable that cannot be bound by the
/// positive body).
Program parseProgram(const std::string& text, std::shared_ptr<Interner> interner = nullptr);

/// Parses a CSV fact file: one fact per line, predicate name first,
/// e.g. `mov,a,b,0.1`. Numeric tokens become Int unless they contain '.' or
/// an exponent; quoted fields are always symbols. Lines are deduplicated
/// (set semantics). Every predicate must be declared in `schema` with a
/// matching arity.
FactSet parseFactFile(const std::string& text, const std::map<std::string, size_t>& schema,
                      Interner& interner);

/// Parses a whitespace-separated relation file (one tuple per line) for a
/// single predicate, souffle .facts style.
FactSet parseFactsRelation(const std::string& text, const std::string& pred,
                           const std::map<std::string, size_t>& schema, Interner& interner);

} // namespace stagelog
