#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace nac::csv {

std::vector<std::string> split_line(std::string_view line);

// Shortest text that parses back to the same double.
std::string format_exact(double v);
// %.{digits}g
std::string format_digits(double v, int digits);

// Strict parse: the whole field must be consumed.
bool parse_double(std::string_view field, double& out);
bool parse_int(std::string_view field, long long& out);

// Quotes a field when it contains a comma or quote.
std::string quote(std::string_view field);

}  // namespace nac::csv
