#pragma once

#include <string>
#include <vector>

#include "casekit/llm_gateway.hpp"
#include "casekit/report.hpp"

namespace casekit {

enum class GoldenSplit { shots, holdout };

// A human-annotated transcript. Shots-split examples seed extraction prompts;
// holdout examples are ground truth for scoring.
struct GoldenExample {
  std::string example_id;
  std::vector<ChatMessage> transcript;
  ScamReport labels;
  std::string annotator;
  GoldenSplit split = GoldenSplit::holdout;
};

}  // namespace casekit
