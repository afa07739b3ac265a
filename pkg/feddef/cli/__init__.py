"""Command line of the feddef tool."""
