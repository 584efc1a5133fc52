#pragma once

#include <stdexcept>
#include <string>

namespace ltcstab {

enum class ErrorCode {
  DisconnectedGraph,
  DisconnectedLoadSubgraph,
  NonPositiveParameter,
  NonPositiveTap,
  SingularSystem,
  NoFeasiblePoint,
  BoxTooLarge,
  SupportInfeasible,
  PreconditionViolation,
  DisconnectedAgent,
  MissingContribution,
  AgentSolveFailed,
  LocalSolveFailed,
  SolverFailed,
  ParseError,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::DisconnectedLoadSubgraph: return "DisconnectedLoadSubgraph";
    case ErrorCode::NonPositiveParameter: return "NonPositiveParameter";
    case ErrorCode::NonPositiveTap: return "NonPositiveTap";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NoFeasiblePoint: return "NoFeasiblePoint";
    case ErrorCode::BoxTooLarge: return "BoxTooLarge";
    case ErrorCode::SupportInfeasible: return "SupportInfeasible";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::DisconnectedAgent: return "DisconnectedAgent";
    case ErrorCode::MissingContribution: return "MissingContribution";
    case ErrorCode::AgentSolveFailed: return "AgentSolveFailed";
    case ErrorCode::LocalSolveFailed: return "LocalSolveFailed";
    case ErrorCode::SolverFailed: return "SolverFailed";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ltcstab
