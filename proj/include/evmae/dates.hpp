#pragma once

#include <chrono>
#include <cstdint>

#include "evmae/region.hpp"

namespace evmae {

inline int days_in_month(int year, int month) {
  using namespace std::chrono;
  const year_month_day_last last{std::chrono::year{year} / month / std::chrono::last};
  return static_cast<int>(static_cast<unsigned>(last.day()));
}

// Days since the civil epoch for a (year, month, day) triple.
inline int64_t day_number(int year, int month, int day) {
  using namespace std::chrono;
  const sys_days d{std::chrono::year{year} / month / day};
  return d.time_since_epoch().count();
}

inline Timestamp date_from_day_number(int64_t n, int hour_field = 0) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{n}}};
  return Timestamp{static_cast<int>(ymd.year()),
                   static_cast<int>(static_cast<unsigned>(ymd.month())),
                   static_cast<int>(static_cast<unsigned>(ymd.day())),
                   hour_field};
}

// Fractional-day ordinal used for date distances. Unknown components fall
// back to mid-range values (year 2019, month 6, day 15, hour-of-day 12);
// they affect distances only, never stored data.
inline double timestamp_ordinal(const Timestamp& ts) {
  const int y = ts.year != 0 ? ts.year : 2019;
  const int m = (ts.month >= 1 && ts.month <= 12) ? ts.month : 6;
  int d = (ts.day >= 1 && ts.day <= 31) ? ts.day : 15;
  d = std::min(d, days_in_month(y, m));
  // Hour fields store hour-of-day + 1; 0 means unknown.
  const double hour_of_day =
      (ts.hour >= 1 && ts.hour <= 24) ? static_cast<double>(ts.hour - 1) : 12.0;
  return static_cast<double>(day_number(y, m, d)) + hour_of_day / 24.0;
}

// Calendar-month addition with day-of-month clamping.
inline Timestamp add_months(const Timestamp& ts, int months) {
  const int y = ts.year != 0 ? ts.year : 2019;
  const int m = (ts.month >= 1 && ts.month <= 12) ? ts.month : 6;
  const int d = (ts.day >= 1 && ts.day <= 31) ? ts.day : 15;
  const int total = (y * 12 + (m - 1)) + months;
  const int ny = total / 12;
  const int nm = total % 12 + 1;
  return Timestamp{ny, nm, std::min(d, days_in_month(ny, nm)), ts.hour};
}

}  // namespace evmae
