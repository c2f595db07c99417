#pragma once

#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>

namespace refi::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3 };

using Field = std::pair<std::string_view, std::string>;

void set_level(Level level);
Level level();
void set_sink(std::ostream* sink);  // default: stderr; nullptr silences

// One JSON object per line: {"level":"warn","msg":"...","key":"value",...}
void emit(Level level, std::string_view msg, std::initializer_list<Field> fields = {});

inline void debug(std::string_view msg, std::initializer_list<Field> f = {}) { emit(Level::debug, msg, f); }
inline void info(std::string_view msg, std::initializer_list<Field> f = {}) { emit(Level::info, msg, f); }
inline void warn(std::string_view msg, std::initializer_list<Field> f = {}) { emit(Level::warn, msg, f); }
inline void error(std::string_view msg, std::initializer_list<Field> f = {}) { emit(Level::error, msg, f); }

}  // namespace refi::log
