#pragma once

#include <string>

namespace hdlab {

// Shortest decimal form that round-trips a double exactly; used everywhere a
// float reaches a file so reruns stay byte-identical.
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
void ensure_directory(const std::string& path);

}  // namespace hdlab
