#pragma once

// Calendar features derived from an hour-aligned UTC timestamp.

#include <cstdint>
#include <set>
#include <tuple>
#include <vector>

namespace alcofm {

struct CivilDate {
  int year = 1970;
  int month = 1;  // 1-12
  int day = 1;    // 1-31

  friend auto operator<=>(const CivilDate&, const CivilDate&) = default;
};

/// Days since 1970-01-01 -> proleptic Gregorian date (H. Hinnant's algorithm).
inline CivilDate civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

inline std::int64_t days_from_civil(CivilDate c) {
  const std::int64_t y = c.year - (c.month <= 2);
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned mp = static_cast<unsigned>(c.month > 2 ? c.month - 3 : c.month + 9);
  const unsigned doy = (153 * mp + 2) / 5 + static_cast<unsigned>(c.day) - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::int64_t utc_seconds(int year, int month, int day, int hour = 0, int minute = 0, int second = 0) {
  return days_from_civil({year, month, day}) * 86400 + hour * 3600 + minute * 60 + second;
}

/// Holidays as fixed (month, day) pairs plus explicit observed dates.
class HolidayCalendar {
 public:
  HolidayCalendar() = default;

  /// New Year, Juneteenth, Independence Day, Veterans Day, Christmas.
  static HolidayCalendar us_fixed_date() {
    HolidayCalendar c;
    for (auto [m, d] : std::vector<std::pair<int, int>>{{1, 1}, {6, 19}, {7, 4}, {11, 11}, {12, 25}})
      c.add_fixed(m, d);
    return c;
  }

  void add_fixed(int month, int day) { fixed_.insert({month, day}); }
  void add_observed(CivilDate date) { observed_.insert(date); }

  bool is_holiday(const CivilDate& d) const {
    return fixed_.count({d.month, d.day}) != 0 || observed_.count(d) != 0;
  }

 private:
  std::set<std::pair<int, int>> fixed_;
  std::set<CivilDate> observed_;
};

struct TemporalCode {
  int season = 0;       // 0 winter (Dec-Feb), 1 spring, 2 summer, 3 fall
  int month = 1;        // 1-12
  int date = 1;         // 1-31
  int day = 0;          // Monday 0 .. Sunday 6
  int weekday = 1;      // 1 Monday-Friday
  int holiday = 0;      // 1 on a calendar holiday
  int part_of_day = 0;  // 0 06-12, 1 12-18, 2 18-24, 3 00-06
  int rush_hour = 2;    // 0 06:00-08:59, 1 15:00-17:59, 2 otherwise

  friend bool operator==(const TemporalCode&, const TemporalCode&) = default;
};

inline TemporalCode encode_temporal(std::int64_t timestamp, const HolidayCalendar& calendar) {
  const std::int64_t days = timestamp >= 0 ? timestamp / 86400 : -((-timestamp + 86399) / 86400);
  const std::int64_t secs = timestamp - days * 86400;
  const int hour = static_cast<int>(secs / 3600);
  const CivilDate date = civil_from_days(days);

  TemporalCode t;
  t.month = date.month;
  t.date = date.day;
  t.season = (date.month % 12) / 3;
  t.day = static_cast<int>(((days + 3) % 7 + 7) % 7);  // 1970-01-01 was a Thursday
  t.weekday = t.day <= 4 ? 1 : 0;
  t.holiday = calendar.is_holiday(date) ? 1 : 0;
  if (hour >= 6 && hour < 12) t.part_of_day = 0;
  else if (hour >= 12 && hour < 18) t.part_of_day = 1;
  else if (hour >= 18) t.part_of_day = 2;
  else t.part_of_day = 3;
  if (hour >= 6 && hour < 9) t.rush_hour = 0;
  else if (hour >= 15 && hour < 18) t.rush_hour = 1;
  else t.rush_hour = 2;
  return t;
}

/// Width of temporal_one_hot's output.
inline constexpr std::size_t kTemporalOneHotWidth = 4 + 7 + 4 + 3 + 2;

/// Season(4) | day(7) | part of day(4) | rush hour(3) | weekday | holiday.
inline std::vector<double> temporal_one_hot(const TemporalCode& t) {
  std::vector<double> v(kTemporalOneHotWidth, 0.0);
  v[static_cast<std::size_t>(t.season)] = 1.0;
  v[4 + static_cast<std::size_t>(t.day)] = 1.0;
  v[11 + static_cast<std::size_t>(t.part_of_day)] = 1.0;
  v[15 + static_cast<std::size_t>(t.rush_hour)] = 1.0;
  v[18] = t.weekday;
  v[19] = t.holiday;
  return v;
}

}  // namespace alcofm
