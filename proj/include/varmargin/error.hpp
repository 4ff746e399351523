#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace varmargin {

enum class ErrorCode {
  InvalidArgument,
  MalformedRow,
  NonPositivePrice,
  DuplicateDate,
  SeriesTooShort,
  NoCommonDates,
  MixedKinds,
  EmptySample,
  InsufficientData,
  NotPositiveSemidefinite,
  DimensionMismatch,
  ExpiredWithinHorizon,
  NoRoot,
  Infeasible,
  UnboundedObjective,
  UnknownAsset,
  ScenarioUnavailable,
  NegativeVar,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::NonPositivePrice: return "NonPositivePrice";
    case ErrorCode::DuplicateDate: return "DuplicateDate";
    case ErrorCode::SeriesTooShort: return "SeriesTooShort";
    case ErrorCode::NoCommonDates: return "NoCommonDates";
    case ErrorCode::MixedKinds: return "MixedKinds";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::NotPositiveSemidefinite: return "NotPositiveSemidefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ExpiredWithinHorizon: return "ExpiredWithinHorizon";
    case ErrorCode::NoRoot: return "NoRoot";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::UnboundedObjective: return "UnboundedObjective";
    case ErrorCode::UnknownAsset: return "UnknownAsset";
    case ErrorCode::ScenarioUnavailable: return "ScenarioUnavailable";
    case ErrorCode::NegativeVar: return "NegativeVar";
  }
  return "Unknown";
}

/// Every failure raised by the engine carries one of the codes above so the
/// service and CLI can map it to a status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace varmargin
