#include "atl/error.hpp"

namespace atl {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Version: return "version";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Load: return "load";
    case ErrorKind::Ingestion: return "ingestion";
    case ErrorKind::Synthesis: return "synthesis";
    case ErrorKind::DegenerateSample: return "degenerate-sample";
    case ErrorKind::DegenerateRelevance: return "degenerate-relevance";
    case ErrorKind::Training: return "training";
  }
  return "unknown";
}

}  // namespace atl
