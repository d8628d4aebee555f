#pragma once

#include <string>

namespace ftm {

// TT: intended invocation (positive class). FT: false trigger.
enum class Label { FT = 0, TT = 1 };
enum class Split { Train, Cv, Dev, Eval };

std::string to_string(Label label);
std::string to_string(Split split);
Label parse_label(const std::string& text);
Split parse_split(const std::string& text);

inline double label_value(Label l) { return l == Label::TT ? 1.0 : 0.0; }

}  // namespace ftm
