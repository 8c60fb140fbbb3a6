#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fsclner {

enum class Errc {
  MalformedTag,
  EmptyCorpus,
  DisjointnessViolation,
  EmptyTask,
  InsufficientSupport,
  DuplicateType,
  MissingRepWords,
  EmptyList,
  DimensionMismatch,
  UnknownType,
  UnknownAnchor,
  IdOutOfRange,
  LayerIndexOutOfRange,
  NonFiniteLoss,
  EmptyPositionSet,
  SupportMismatch,
  NonFiniteInput,
  VocabNotExtended,
  TeacherMissing,
  UnknownSwitch,
  TooFewSteps,
  NoResultsFound,
  InvalidConfig,
  Io,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::MalformedTag: return "MalformedTag";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::DisjointnessViolation: return "DisjointnessViolation";
    case Errc::EmptyTask: return "EmptyTask";
    case Errc::InsufficientSupport: return "InsufficientSupport";
    case Errc::DuplicateType: return "DuplicateType";
    case Errc::MissingRepWords: return "MissingRepWords";
    case Errc::EmptyList: return "EmptyList";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::UnknownType: return "UnknownType";
    case Errc::UnknownAnchor: return "UnknownAnchor";
    case Errc::IdOutOfRange: return "IdOutOfRange";
    case Errc::LayerIndexOutOfRange: return "LayerIndexOutOfRange";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::EmptyPositionSet: return "EmptyPositionSet";
    case Errc::SupportMismatch: return "SupportMismatch";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::VocabNotExtended: return "VocabNotExtended";
    case Errc::TeacherMissing: return "TeacherMissing";
    case Errc::UnknownSwitch: return "UnknownSwitch";
    case Errc::TooFewSteps: return "TooFewSteps";
    case Errc::NoResultsFound: return "NoResultsFound";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the Errc codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace fsclner
