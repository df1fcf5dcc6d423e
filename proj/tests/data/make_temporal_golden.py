"""Regenerates temporal_golden.csv from Python's datetime, independently of the C++ encoder."""
import datetime
import random

HOLIDAYS = {(1, 1), (6, 19), (7, 4), (11, 11), (12, 25)}
SEASON = {12: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1, 6: 2, 7: 2, 8: 2, 9: 3, 10: 3, 11: 3}


def utc(*args):
    return int(datetime.datetime(*args, tzinfo=datetime.timezone.utc).timestamp())


def main():
    random.seed(20240607)
    ts = [utc(2021, 12, 25, 16, 30), utc(2019, 3, 4, 7, 0), utc(2020, 1, 1, 0, 0)]
    ts += [utc(2022, 7, 4, h, 0) for h in range(24)]
    lo, hi = utc(2015, 1, 1), utc(2026, 1, 1)
    while len(ts) < 500:
        ts.append(random.randrange(lo, hi))
    with open("temporal_golden.csv", "w") as f:
        f.write("ts,season,month,date,day,weekday,holiday,part_of_day,rush_hour\n")
        for t in ts:
            d = datetime.datetime.fromtimestamp(t, datetime.timezone.utc)
            day = d.weekday()
            h = d.hour
            pod = 0 if 6 <= h < 12 else 1 if 12 <= h < 18 else 2 if h >= 18 else 3
            rush = 0 if 6 <= h < 9 else 1 if 15 <= h < 18 else 2
            hol = 1 if (d.month, d.day) in HOLIDAYS else 0
            f.write(f"{t},{SEASON[d.month]},{d.month},{d.day},{day},{int(day <= 4)},{hol},{pod},{rush}\n")


if __name__ == "__main__":
    main()
