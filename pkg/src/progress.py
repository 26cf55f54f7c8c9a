from tqdm import tqdm


def progress(iterable, verbose: bool = False, **kwargs):
    """
    Shows a progress bar if verbose output is enabled

    Args:
        iterable: iterable object
        verbose: Wrap the iterable in tqdm if set
        kwargs: keyword arguments passed on to tqdm if verbose
    Returns:
        Unchanged iterable if not verbose, otherwise wrapped by tqdm
    """
    if verbose:
        return tqdm(iterable, **kwargs)
    else:
        return iterable


def log(text: str, verbose: bool = False):
    """
    Chooses print function depending on verbosity setting, so that lines do not break
    active progress bars

    Args:
        text: String to be printed
        verbose: Whether progress bars may be active
    """
    if verbose:
        tqdm.write(text)
    else:
        print(text, flush=True)
