"""Measured values of the physical source used as reproduction targets."""

# pump power [nW] -> (eta_B, eta_T), Klyshko efficiencies at full channel transmission
MEASURED_KLYSHKO = {
    20: (0.1075, 0.1776),
    50: (0.1072, 0.1776),
    100: (0.1065, 0.1772),
    200: (0.1002, 0.1766),
    500: (0.0997, 0.1721),
    1000: (0.0941, 0.1658),
    2000: (0.0855, 0.1547),
}

# click statistics at 2 uW, channel open, 60 s at 1 MHz; index = herald click number 0..4
MEASURED_COUNTS_2UW = {
    "no_click": (49244089, 6157356, 334960, 10383, 197),
    "click": (3049176, 1092105, 102653, 4608, 112),
    "n_T": (52293265, 7249461, 437613, 14991, 309),
}
