from __future__ import annotations

import logging
import sys
import textwrap
from typing import Any, Type

import colorama


class TempcrlLogger(logging.Logger):
    """
    Tempcrl logger class.

    It extends the standard logger with additional :meth:`colorize` method that
    can be used to put some colors into the log message.

    It also allows to log extra data, that are printed in a formatted way
    together with the message.

    .. code-block:: python

        logger.info(
            "Training progress",
            extra={"data": {
                "step": 100,
                "loss": 12.5,
                ...
            }}
        )
    """

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)

        self.allow_colors: bool = False
        self.log_path: str | None = None
        self.handler: logging.Handler | None = None

    @classmethod
    def GetLogger(cls, *, loggercls: Type[TempcrlLogger] | None = None, suffix: str | None = None) -> TempcrlLogger:
        """
        Returns the tempcrl logger.

        :param loggercls: Logger class, defaults to None (= cls).
        :type loggercls: Type[TempcrlLogger] | None
        :param suffix: Logger name suffix, defaults to None.
        :type suffix: str | None
        :return: Logger.
        :rtype: TempcrlLogger
        """
        name = "tempcrl"
        if suffix:
            name += f".{suffix}"

        if loggercls is None:
            loggercls = cls

        old_class = logging.getLoggerClass()

        logging.setLoggerClass(loggercls)
        logger = logging.getLogger(name)
        logging.setLoggerClass(old_class)

        if not isinstance(logger, loggercls):
            raise ValueError(f"logger must be instance of {loggercls.__name__}")

        return logger

    def setup(self, log_path: str | None = None, *, verbose: bool = False) -> None:
        """
        Setup logging facility.

        Messages are written to standard error if ``log_path`` is None. Colors
        are allowed if the output is ``/dev/stdout``, ``/dev/stderr`` or a
        terminal.

        :param log_path: Path to the log file, defaults to None (= stderr).
        :type log_path: str | None
        :param verbose: Log debug messages, defaults to False.
        :type verbose: bool
        """
        self.teardown()

        self.log_path = log_path
        if log_path is None:
            self.handler = logging.StreamHandler(sys.stderr)
            self.allow_colors = sys.stderr.isatty()
        elif log_path in ["/dev/stdout", "/dev/stderr"]:
            self.handler = logging.StreamHandler(sys.stdout if log_path == "/dev/stdout" else sys.stderr)
            self.allow_colors = True
        else:
            self.handler = logging.FileHandler(log_path)
            self.allow_colors = False

        self.handler.setLevel(logging.DEBUG)
        self.handler.setFormatter(logging.Formatter("%(levelname)-8s %(asctime)s %(message)s"))

        self.handler.addFilter(LogExtraDataFilter(logger=self, indent=34))
        self.addHandler(self.handler)
        self.setLevel(logging.DEBUG if verbose else logging.INFO)
        self.propagate = False

    def teardown(self) -> None:
        """
        Remove handler and filters installed by :meth:`setup`.
        """
        if self.handler is not None:
            self.removeHandler(self.handler)
            self.handler.close()
            self.handler = None

        self.propagate = True

    def colorize(self, text: str | Any, *colors: str) -> str:
        """
        Make the ``text`` colored with ANSI colors.

        :param text: Text to format. ``str(text)`` is called on the parameter.
        :type text: str | Any
        :param \\*colors: Colors to apply on the text.
        :type \\*colors: colorama.Fore | colorama.Back | colorama.Style
        :return: Text with colors, if colors are allowed. Unchanged text otherwise.
        :rtype: str
        """
        if not self.allow_colors:
            return str(text)

        return "".join(colors) + str(text) + colorama.Style.RESET_ALL

    def phase(self, phase: str) -> None:
        """
        Log current pipeline phase.

        :param phase: Phase name or description.
        :type phase: str
        """
        self.info(
            self.colorize(
                f"{phase}",
                colorama.Style.BRIGHT,
                colorama.Back.BLACK,
                colorama.Fore.WHITE,
            )
        )

    def notice(self, msg: str, **data: Any) -> None:
        """
        Log a warning that does not stop the computation, with optional
        structured data.

        :param msg: Message.
        :type msg: str
        """
        self.warning(self.colorize(msg, colorama.Fore.YELLOW), extra={"data": data} if data else None)


class LogExtraDataFilter(logging.Filter):
    """
    :meta private:
    """

    def __init__(self, *args, logger: TempcrlLogger, indent: int, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.indent: int = indent
        self.__logger: TempcrlLogger = logger

    def dumps(self, o) -> str:
        if isinstance(o, dict):
            out = ""
            for key, value in o.items():
                out += "\n"
                key = self.__logger.colorize(key, colorama.Fore.BLUE)
                out += textwrap.indent(f"{key}: {self.format(value)}", " " * 2)

            return out

        if isinstance(o, (list, set, tuple)):
            out = ""
            for value in o:
                out += "\n- " + self.format(value)

            return out

        value = self.format(o)
        if "\n" not in value:
            return value

        return "|\n" + textwrap.indent(value, " " * 2)

    def format(self, value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.6g}"

        return str(value)

    def filter(self, record):
        data = getattr(record, "data", None)
        if data:
            for key, value in data.items():
                record.msg += "\n"
                record.msg += textwrap.indent(
                    f"{self.__logger.colorize(key, colorama.Fore.MAGENTA)}: {self.dumps(value)}", " " * self.indent
                )

        return super().filter(record)
