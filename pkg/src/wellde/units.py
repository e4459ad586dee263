"""Unit conversion constants.

The simulator works internally in SI (Pa, m^2, Pa.s, s). Inputs and reported
quantities use field-friendly units (bar, mD, cp, days, m^3/day); every
conversion goes through the constants below.
"""

BAR = 1.0e5                       # Pa
MILLIDARCY = 9.869233e-16         # m^2
CENTIPOISE = 1.0e-3               # Pa.s
DAY = 86400.0                     # s
YEAR_DAYS = 365.0                 # days per year, used for discounting
BBL_PER_M3 = 6.2898               # barrels per cubic metre
FOOT = 0.3048                     # m
