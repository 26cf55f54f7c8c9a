import numpy as np


def load_table(path: str) -> tuple[np.ndarray, dict]:
    """
    Reads a 16-cell table file. Data rows are "x y a b value"; rows with two columns
    are "key value" header entries; '#' starts a comment.

    Args:
        path: Path to the table file
    Returns:
        values: float64 array indexed [x, y, a, b]
        header: Dictionary of header entries as floats
    """
    values = np.full((2, 2, 2, 2), np.nan)
    header = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            cols = line.split()
            if len(cols) == 2:
                header[cols[0]] = float(cols[1])
            elif len(cols) == 5:
                x, y, a, b = (int(c) for c in cols[:4])
                if not all(v in (0, 1) for v in (x, y, a, b)):
                    raise ValueError(f"{path}:{lineno}: cell labels must be bits")
                values[x, y, a, b] = float(cols[4])
            else:
                raise ValueError(f"{path}:{lineno}: expected 2 or 5 columns, got {len(cols)}")
    if np.isnan(values).any():
        raise ValueError(f"{path}: table does not define all 16 cells")
    return values, header


def save_table(path: str, values: np.ndarray, header: dict = None, comment: str = ""):
    with open(path, "w") as f:
        if comment:
            f.write(f"# {comment}\n")
        for key, value in (header or {}).items():
            f.write(f"{key} {value!r}\n")
        f.write("# x y a b value\n")
        for x in (0, 1):
            for y in (0, 1):
                for a in (0, 1):
                    for b in (0, 1):
                        f.write(f"{x} {y} {a} {b} {values[x, y, a, b]!r}\n")
