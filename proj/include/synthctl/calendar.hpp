#pragma once

#include <chrono>
#include <compare>
#include <cstdio>
#include <string>

#include "synthctl/errors.hpp"

namespace synthctl {

/// Calendar day, ISO-8601 in and out. Thin wrapper over days-since-epoch so
/// day arithmetic is plain integer arithmetic.
class Date {
public:
  Date() = default;
  explicit Date(std::chrono::sys_days d) : days_(d) {}
  Date(int year, unsigned month, unsigned day)
      : days_(std::chrono::year_month_day{std::chrono::year{year},
                                          std::chrono::month{month},
                                          std::chrono::day{day}}) {}

  static Date parse(const std::string& iso) {
    int y = 0;
    unsigned m = 0, d = 0;
    char trail = 0;
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-' ||
        std::sscanf(iso.c_str(), "%d-%u-%u%c", &y, &m, &d, &trail) != 3)
      throw ParseError("malformed date '" + iso + "' (expected YYYY-MM-DD)");
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                    std::chrono::day{d}};
    if (!ymd.ok())
      throw ParseError("invalid calendar date '" + iso + "'");
    return Date(std::chrono::sys_days{ymd});
  }

  std::string iso() const {
    std::chrono::year_month_day ymd{days_};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()));
    return buf;
  }

  Date operator+(int n) const { return Date(days_ + std::chrono::days{n}); }
  Date operator-(int n) const { return Date(days_ - std::chrono::days{n}); }
  int operator-(Date o) const { return int((days_ - o.days_).count()); }

  auto operator<=>(const Date&) const = default;

private:
  std::chrono::sys_days days_{};
};

}  // namespace synthctl
